//! The contrastive + denoising representation network.
//!
//! Data flow for one snippet (T×C, channels ordered by distance from the
//! peak channel):
//!
//! ```text
//! snippet ─ conv ─┬─ encoder ─ projection ─ prediction ─ q   (online)
//!                 ├─ target encoder ─ target projection ─ k  (momentum copy)
//!                 └─ DAE ─ v̂                                 (view 1 only)
//! ```
//!
//! Everything runs in `f64` on a small reverse-mode [`tape`].

mod checkpoint;
mod loss;
mod net;
mod optim;
pub mod tape;
mod train;

use ndarray::Array2;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use checkpoint::{checkpoint_paths, load_checkpoint, save_checkpoint};
pub use loss::{denoise_loss, info_nce, info_nce_with_grad};
pub use net::{conv_frontend, dae_apply, embed, encode, im2col, View};
pub use optim::{lr_at, momentum_update};
pub use train::{
    batch_losses, loss_and_grad, losses_with_keys, target_keys, make_batch_views, train, train_step, EpochLog, GradResult, StepLosses,
    TrainViews,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub snippet_t: usize,
    pub snippet_c: usize,
    pub conv_kernel: usize,
    /// Token width E after the convolution frontend.
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub rep_dim: usize,
    pub proj_dim: usize,
    pub pred_hidden_dim: usize,
    pub dae_hidden_dim: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub positional_encoding: bool,
    /// Multiplier applied to raw µV input before the convolution.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            snippet_t: 121,
            snippet_c: 21,
            conv_kernel: 5,
            embed_dim: 32,
            n_layers: 2,
            n_heads: 4,
            ff_dim: 64,
            rep_dim: 32,
            proj_dim: 64,
            pred_hidden_dim: 64,
            dae_hidden_dim: 64,
            temperature: 0.2,
            momentum: 0.99,
            alpha: 0.2,
            positional_encoding: true,
            input_scale: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("snippet_t", self.snippet_t),
            ("snippet_c", self.snippet_c),
            ("conv_kernel", self.conv_kernel),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("rep_dim", self.rep_dim),
            ("proj_dim", self.proj_dim),
            ("pred_hidden_dim", self.pred_hidden_dim),
            ("dae_hidden_dim", self.dae_hidden_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1]".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            peak_lr: 1e-4,
            warmup_epochs: 10,
            weight_decay: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parameter indices of one transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EncoderIdx {
    pub pos: Option<usize>,
    pub blocks: Vec<BlockIdx>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

/// Two-layer MLP `Linear → GELU → Linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MlpIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DaeIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub dec_w: usize,
    pub dec_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub conv_w: usize,
    pub encoder: EncoderIdx,
    pub proj: MlpIdx,
    pub pred: MlpIdx,
    pub dae: DaeIdx,
    pub target_encoder: EncoderIdx,
    pub target_proj: MlpIdx,
    /// First index of the target network; everything before it is trainable.
    pub n_trainable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
    Small,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn encoder(&mut self, prefix: &str, c: &ModelConfig) -> EncoderIdx {
        let e = c.embed_dim;
        let pos = c
            .positional_encoding
            .then(|| self.add(format!("{prefix}.pos"), (c.snippet_t, e), Init::Small));
        let blocks = (0..c.n_layers)
            .map(|l| {
                let p = format!("{prefix}.block{l}");
                BlockIdx {
                    ln1_g: self.add(format!("{p}.ln1.gamma"), (1, e), Init::Ones),
                    ln1_b: self.add(format!("{p}.ln1.beta"), (1, e), Init::Zeros),
                    wqkv: self.add(format!("{p}.attn.wqkv"), (e, 3 * e), Init::Glorot),
                    bqkv: self.add(format!("{p}.attn.bqkv"), (1, 3 * e), Init::Zeros),
                    wo: self.add(format!("{p}.attn.wo"), (e, e), Init::Glorot),
                    bo: self.add(format!("{p}.attn.bo"), (1, e), Init::Zeros),
                    ln2_g: self.add(format!("{p}.ln2.gamma"), (1, e), Init::Ones),
                    ln2_b: self.add(format!("{p}.ln2.beta"), (1, e), Init::Zeros),
                    w1: self.add(format!("{p}.ff.w1"), (e, c.ff_dim), Init::Glorot),
                    b1: self.add(format!("{p}.ff.b1"), (1, c.ff_dim), Init::Zeros),
                    w2: self.add(format!("{p}.ff.w2"), (c.ff_dim, e), Init::Glorot),
                    b2: self.add(format!("{p}.ff.b2"), (1, e), Init::Zeros),
                }
            })
            .collect();
        EncoderIdx {
            pos,
            blocks,
            lnf_g: self.add(format!("{prefix}.lnf.gamma"), (1, e), Init::Ones),
            lnf_b: self.add(format!("{prefix}.lnf.beta"), (1, e), Init::Zeros),
            out_w: self.add(format!("{prefix}.out.w"), (e, c.rep_dim), Init::Glorot),
            out_b: self.add(format!("{prefix}.out.b"), (1, c.rep_dim), Init::Zeros),
        }
    }

    fn mlp(&mut self, prefix: &str, din: usize, hidden: usize, dout: usize) -> MlpIdx {
        MlpIdx {
            w1: self.add(format!("{prefix}.w1"), (din, hidden), Init::Glorot),
            b1: self.add(format!("{prefix}.b1"), (1, hidden), Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), (hidden, dout), Init::Glorot),
            b2: self.add(format!("{prefix}.b2"), (1, dout), Init::Zeros),
        }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let e = c.embed_dim;
    let conv_w = b.add("conv.w".into(), (c.snippet_c * c.conv_kernel, e), Init::Glorot);
    let encoder = b.encoder("encoder", c);
    let proj = b.mlp("proj", c.rep_dim, c.proj_dim, c.proj_dim);
    let pred = b.mlp("pred", c.proj_dim, c.pred_hidden_dim, c.proj_dim);
    let h = c.dae_hidden_dim;
    let dae = DaeIdx {
        w1: b.add("dae.w1".into(), (e, h), Init::Glorot),
        b1: b.add("dae.b1".into(), (1, h), Init::Zeros),
        w2: b.add("dae.w2".into(), (h, h), Init::Glorot),
        b2: b.add("dae.b2".into(), (1, h), Init::Zeros),
        dec_w: b.add("dae.dec.w".into(), (h, e), Init::Zeros),
        dec_b: b.add("dae.dec.b".into(), (1, e), Init::Zeros),
    };
    let n_trainable = b.names.len();
    let target_encoder = b.encoder("target.encoder", c);
    let target_proj = b.mlp("target.proj", c.rep_dim, c.proj_dim, c.proj_dim);
    (
        Layout {
            conv_w,
            encoder,
            proj,
            pred,
            dae,
            target_encoder,
            target_proj,
            n_trainable,
        },
        b,
    )
}

impl Layout {
    /// Pairs of (online, target) indices covering the momentum-averaged trees.
    pub(crate) fn target_pairs(&self) -> Vec<(usize, usize)> {
        fn enc(a: &EncoderIdx, b: &EncoderIdx, out: &mut Vec<(usize, usize)>) {
            if let (Some(x), Some(y)) = (a.pos, b.pos) {
                out.push((x, y));
            }
            for (x, y) in a.blocks.iter().zip(&b.blocks) {
                out.extend([
                    (x.ln1_g, y.ln1_g),
                    (x.ln1_b, y.ln1_b),
                    (x.wqkv, y.wqkv),
                    (x.bqkv, y.bqkv),
                    (x.wo, y.wo),
                    (x.bo, y.bo),
                    (x.ln2_g, y.ln2_g),
                    (x.ln2_b, y.ln2_b),
                    (x.w1, y.w1),
                    (x.b1, y.b1),
                    (x.w2, y.w2),
                    (x.b2, y.b2),
                ]);
            }
            out.extend([(a.lnf_g, b.lnf_g), (a.lnf_b, b.lnf_b), (a.out_w, b.out_w), (a.out_b, b.out_b)]);
        }
        let mut out = Vec::new();
        enc(&self.encoder, &self.target_encoder, &mut out);
        let (p, q) = (self.proj, self.target_proj);
        out.extend([(p.w1, q.w1), (p.b1, q.b1), (p.w2, q.w2), (p.b2, q.b2)]);
        out
    }
}

/// All parameters, optimizer moments and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Array2<f64>>,
    /// Whether decoupled weight decay applies to each tensor.
    pub decay: Vec<bool>,
    pub adam_m: Vec<Array2<f64>>,
    pub adam_v: Vec<Array2<f64>>,
    pub step: u64,
    /// Base seed for per-step view generation.
    pub seed: u64,
    pub(crate) layout: Layout,
}

impl ModelState {
    /// Fresh parameters; the target network starts as a copy of the online one.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        let mut rng = rng::substream(rng::named(seed, "model-init"), &[]);
        let params: Vec<Array2<f64>> = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&(r, c), init)| init_tensor(r, c, *init, &mut rng))
            .collect();
        let decay = b
            .names
            .iter()
            .zip(&b.inits)
            .map(|(n, i)| *i == Init::Glorot || n.ends_with("dae.dec.w"))
            .collect();
        let adam_m = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        let adam_v = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        let mut state = Self {
            config: config.clone(),
            names: b.names,
            params,
            decay,
            adam_m,
            adam_v,
            step: 0,
            seed,
            layout,
        };
        for (o, t) in state.layout.target_pairs() {
            state.params[t] = state.params[o].clone();
        }
        Ok(state)
    }

    pub fn n_trainable(&self) -> usize {
        self.layout.n_trainable
    }

    /// Indices of the target-network tensors.
    pub fn target_indices(&self) -> Vec<usize> {
        (self.layout.n_trainable..self.params.len()).collect()
    }

    /// (online, target) index pairs of the momentum-averaged tensors.
    pub fn target_pairs(&self) -> Vec<(usize, usize)> {
        self.layout.target_pairs()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_parameters(&self) -> usize {
        self.params[..self.layout.n_trainable].iter().map(|p| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

fn init_tensor(r: usize, c: usize, init: Init, rng: &mut Rng) -> Array2<f64> {
    match init {
        Init::Zeros => Array2::zeros((r, c)),
        Init::Ones => Array2::ones((r, c)),
        Init::Small => {
            let d = Normal::new(0.0, 0.02).expect("valid normal");
            Array2::from_shape_fn((r, c), |_| d.sample(rng))
        }
        Init::Glorot => {
            let a = (6.0 / (r + c) as f64).sqrt();
            let d = Uniform::new(-a, a).expect("valid range");
            Array2::from_shape_fn((r, c), |_| d.sample(rng))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_starts_as_copy() {
        let s = ModelState::new(&ModelConfig::default(), 3).unwrap();
        for (o, t) in s.target_pairs() {
            assert_eq!(s.params[o], s.params[t]);
            assert_eq!(s.names[t], format!("target.{}", s.names[o]));
        }
        assert_eq!(s.target_pairs().len(), s.target_indices().len());
    }

    #[test]
    fn dae_decoder_is_zero() {
        let s = ModelState::new(&ModelConfig::default(), 3).unwrap();
        let i = s.param_index("dae.dec.w").unwrap();
        assert!(s.params[i].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            n_heads: 5,
            ..ModelConfig::default()
        };
        assert!(ModelState::new(&c, 0).is_err());
    }

    #[test]
    fn warmup_must_precede_end() {
        let t = TrainConfig {
            epochs: 10,
            warmup_epochs: 10,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }
}
