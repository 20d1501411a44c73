use ndarray::Array2;

use super::tape::{Tape, Var};
use super::{DaeIdx, EncoderIdx, Layout, MlpIdx, ModelConfig, ModelState};
use crate::error::{Error, Result};

/// A snippet zero-padded to the model's C channels with a 0/1 channel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub values: Array2<f64>,
    pub mask: Vec<f64>,
}

impl View {
    /// A view with every channel present.
    pub fn full(values: Array2<f64>) -> Self {
        let mask = vec![1.0; values.ncols()];
        Self { values, mask }
    }

    /// Scatters a cropped view back to `c` channel positions.
    pub fn from_crop(values: &Array2<f64>, channels: &[usize], c: usize) -> Self {
        let (values, mask) = crate::augment::pad_view(values, channels, c);
        Self { values, mask }
    }
}

/// Builds the T×(C·K) "same"-padded patch matrix for a kernel of width `k`.
/// Column `c·k + j` holds channel `c` at time offset `j − k/2`. Masked
/// channels and out-of-range samples are zero; values are multiplied by
/// `scale`.
pub fn im2col(view: &View, k: usize, scale: f64) -> Array2<f64> {
    let (t, c) = view.values.dim();
    let half = (k / 2) as i64;
    let mut out = Array2::zeros((t, c * k));
    for ti in 0..t {
        for ch in 0..c {
            let m = view.mask[ch] * scale;
            if m == 0.0 {
                continue;
            }
            for j in 0..k {
                let src = ti as i64 + j as i64 - half;
                if (0..t as i64).contains(&src) {
                    out[[ti, ch * k + j]] = view.values[[src as usize, ch]] * m;
                }
            }
        }
    }
    out
}

/// A tape plus the parameter set it reads from. Online parameters become
/// gradient-carrying leaves when `grad` is set; target parameters never do.
pub(crate) struct Graph<'a> {
    pub tape: Tape,
    params: &'a [Array2<f64>],
    n_trainable: usize,
    grad: bool,
    cache: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(state: &'a ModelState, grad: bool) -> Self {
        Self::with_params(&state.params, state.layout.n_trainable, grad)
    }

    pub fn with_params(params: &'a [Array2<f64>], n_trainable: usize, grad: bool) -> Self {
        Self {
            tape: Tape::new(),
            params,
            n_trainable,
            grad,
            cache: vec![None; params.len()],
        }
    }

    pub fn p(&mut self, idx: usize) -> Var {
        if let Some(v) = self.cache[idx] {
            return v;
        }
        let value = self.params[idx].clone();
        let v = if self.grad && idx < self.n_trainable {
            self.tape.param(idx, value)
        } else {
            self.tape.leaf(value)
        };
        self.cache[idx] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let wv = self.p(w);
        let bv = self.p(b);
        let y = self.tape.matmul(x, wv);
        self.tape.add_row(y, bv)
    }

    pub fn conv(&mut self, layout: &Layout, cfg: &ModelConfig, view: &View) -> Var {
        let cols = self.tape.leaf(im2col(view, cfg.conv_kernel, cfg.input_scale));
        let w = self.p(layout.conv_w);
        self.tape.matmul(cols, w)
    }

    pub fn encoder(&mut self, enc: &EncoderIdx, cfg: &ModelConfig, emb: Var) -> Var {
        let e = cfg.embed_dim;
        let dh = e / cfg.n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut x = emb;
        if let Some(pos) = enc.pos {
            let pv = self.p(pos);
            x = self.tape.add(x, pv);
        }
        for b in &enc.blocks {
            let (g, bb) = (self.p(b.ln1_g), self.p(b.ln1_b));
            let h = self.tape.layer_norm(x, g, bb);
            let qkv = self.linear(h, b.wqkv, b.bqkv);
            let heads: Vec<Var> = (0..cfg.n_heads)
                .map(|hi| {
                    let q = self.tape.slice_cols(qkv, hi * dh, dh);
                    let k = self.tape.slice_cols(qkv, e + hi * dh, dh);
                    let v = self.tape.slice_cols(qkv, 2 * e + hi * dh, dh);
                    let s = self.tape.matmul_bt(q, k);
                    let s = self.tape.scale(s, inv_sqrt);
                    let p = self.tape.softmax_rows(s);
                    self.tape.matmul(p, v)
                })
                .collect();
            let cat = if heads.len() == 1 { heads[0] } else { self.tape.concat_cols(&heads) };
            let attn = self.linear(cat, b.wo, b.bo);
            x = self.tape.add(x, attn);
            let (g, bb) = (self.p(b.ln2_g), self.p(b.ln2_b));
            let h = self.tape.layer_norm(x, g, bb);
            let f = self.linear(h, b.w1, b.b1);
            let f = self.tape.gelu(f);
            let f = self.linear(f, b.w2, b.b2);
            x = self.tape.add(x, f);
        }
        let (g, bb) = (self.p(enc.lnf_g), self.p(enc.lnf_b));
        let h = self.tape.layer_norm(x, g, bb);
        let pooled = self.tape.mean_rows(h);
        self.linear(pooled, enc.out_w, enc.out_b)
    }

    pub fn mlp(&mut self, m: &MlpIdx, x: Var) -> Var {
        let h = self.linear(x, m.w1, m.b1);
        let h = self.tape.gelu(h);
        self.linear(h, m.w2, m.b2)
    }

    pub fn dae(&mut self, d: &DaeIdx, x: Var) -> Var {
        let h = self.linear(x, d.w1, d.b1);
        let h = self.tape.gelu(h);
        let h = self.linear(h, d.w2, d.b2);
        let h = self.tape.gelu(h);
        self.linear(h, d.dec_w, d.dec_b)
    }

    /// Online query: normalised prediction(projection(encoder(emb))).
    pub fn query(&mut self, layout: &Layout, cfg: &ModelConfig, emb: Var) -> Var {
        let r = self.encoder(&layout.encoder, cfg, emb);
        let z = self.mlp(&layout.proj, r);
        let p = self.mlp(&layout.pred, z);
        self.tape.l2_normalize_row(p)
    }

    /// Target key: normalised target projection(target encoder(emb)).
    pub fn key(&mut self, layout: &Layout, cfg: &ModelConfig, emb: Var) -> Var {
        let r = self.encoder(&layout.target_encoder, cfg, emb);
        let z = self.mlp(&layout.target_proj, r);
        self.tape.l2_normalize_row(z)
    }
}

fn check_shape(state: &ModelState, s: &Array2<f64>) -> Result<()> {
    let want = (state.config.snippet_t, state.config.snippet_c);
    if s.dim() != want {
        return Err(Error::Shape(format!("snippet is {:?}, model expects {:?}", s.dim(), want)));
    }
    Ok(())
}

fn check_emb(state: &ModelState, e: &Array2<f64>) -> Result<()> {
    let want = (state.config.snippet_t, state.config.embed_dim);
    if e.dim() != want {
        return Err(Error::Shape(format!("embedding is {:?}, model expects {:?}", e.dim(), want)));
    }
    Ok(())
}

/// T×E token embedding of a (possibly masked) snippet.
pub fn conv_frontend(state: &ModelState, view: &View) -> Result<Array2<f64>> {
    check_shape(state, &view.values)?;
    if view.mask.len() != state.config.snippet_c {
        return Err(Error::Shape(format!("mask has {} channels", view.mask.len())));
    }
    let mut g = Graph::new(state, false);
    let v = g.conv(&state.layout, &state.config, view);
    Ok(g.tape.value(v).clone())
}

/// Online-encoder representation (length `rep_dim`) of a token embedding.
pub fn encode(state: &ModelState, emb: &Array2<f64>) -> Result<Vec<f64>> {
    check_emb(state, emb)?;
    let mut g = Graph::new(state, false);
    let x = g.tape.leaf(emb.clone());
    let r = g.encoder(&state.layout.encoder, &state.config, x);
    let out = g.tape.value(r).row(0).to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite representation".into()));
    }
    Ok(out)
}

pub fn dae_apply(state: &ModelState, emb: &Array2<f64>) -> Result<Array2<f64>> {
    check_emb(state, emb)?;
    let mut g = Graph::new(state, false);
    let x = g.tape.leaf(emb.clone());
    let y = g.dae(&state.layout.dae, x);
    Ok(g.tape.value(y).clone())
}

fn embed_one(state: &ModelState, s: &Array2<f64>, use_dae: bool) -> Result<Vec<f64>> {
    let mut g = Graph::new(state, false);
    let mut x = g.conv(&state.layout, &state.config, &View::full(s.clone()));
    if use_dae {
        x = g.dae(&state.layout.dae, x);
    }
    let r = g.encoder(&state.layout.encoder, &state.config, x);
    let out = g.tape.value(r).row(0).to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite representation".into()));
    }
    Ok(out)
}

/// N×rep_dim representations; with `use_dae` the DAE is applied to the
/// token embedding before the encoder.
pub fn embed(state: &ModelState, snippets: &[Array2<f64>], use_dae: bool) -> Result<Array2<f64>> {
    for s in snippets {
        check_shape(state, s)?;
    }
    #[cfg(feature = "parallel")]
    let rows: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        snippets.par_iter().map(|s| embed_one(state, s, use_dae)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<Vec<f64>>> = snippets.iter().map(|s| embed_one(state, s, use_dae)).collect();
    let r = state.config.rep_dim;
    let mut out = Array2::zeros((snippets.len(), r));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from(row?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> ModelConfig {
        ModelConfig {
            snippet_t: 21,
            snippet_c: 5,
            embed_dim: 8,
            n_heads: 2,
            ff_dim: 16,
            rep_dim: 6,
            proj_dim: 8,
            pred_hidden_dim: 8,
            dae_hidden_dim: 8,
            input_scale: 1.0,
            ..ModelConfig::default()
        }
    }

    fn randn(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_fn((r, c), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_snippet_gives_zero_embedding() {
        let st = ModelState::new(&small(), 1).unwrap();
        let e = conv_frontend(&st, &View::full(Array2::zeros((21, 5)))).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let cfg = ModelConfig {
            conv_kernel: 1,
            embed_dim: 5,
            n_heads: 1,
            ..small()
        };
        let mut st = ModelState::new(&cfg, 1).unwrap();
        st.params[st.layout.conv_w] = Array2::eye(5);
        let x = randn(21, 5, 2);
        assert_eq!(conv_frontend(&st, &View::full(x.clone())).unwrap(), x);
    }

    #[test]
    fn mask_equals_zeroed_channel() {
        let st = ModelState::new(&small(), 1).unwrap();
        let x = randn(21, 5, 3);
        let mut masked = View::full(x.clone());
        masked.mask[2] = 0.0;
        let mut zeroed = x;
        zeroed.column_mut(2).fill(0.0);
        assert_eq!(
            conv_frontend(&st, &masked).unwrap(),
            conv_frontend(&st, &View::full(zeroed)).unwrap()
        );
    }

    #[test]
    fn conv_matches_direct_sum() {
        let st = ModelState::new(&small(), 4).unwrap();
        let x = randn(21, 5, 5);
        let e = conv_frontend(&st, &View::full(x.clone())).unwrap();
        let w = &st.params[st.layout.conv_w];
        let (t, o) = (9, 3);
        let mut want = 0.0;
        for c in 0..5 {
            for j in 0..5 {
                want += x[[t + j - 2, c]] * w[[c * 5 + j, o]];
            }
        }
        assert!((e[[t, o]] - want).abs() < 1e-12);
    }

    #[test]
    fn token_permutation_invariance_without_positions() {
        let cfg = ModelConfig {
            positional_encoding: false,
            ..small()
        };
        let st = ModelState::new(&cfg, 6).unwrap();
        let e = randn(21, 8, 7);
        let perm: Vec<usize> = (0..21).rev().collect();
        let ep = e.select(ndarray::Axis(0), &perm);
        let a = encode(&st, &e).unwrap();
        let b = encode(&st, &ep).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn default_representation_has_32_dims() {
        let st = ModelState::new(&ModelConfig::default(), 0).unwrap();
        let snips = vec![randn(121, 21, 1), randn(121, 21, 1)];
        let r = embed(&st, &snips, false).unwrap();
        assert_eq!(r.dim(), (2, 32));
        assert_eq!(r.row(0), r.row(1));
    }

    #[test]
    fn zero_decoder_maps_everything_to_zero_embedding() {
        let st = ModelState::new(&small(), 8).unwrap();
        let out = dae_apply(&st, &randn(21, 8, 9)).unwrap();
        assert_eq!(out.dim(), (21, 8));
        assert!(out.iter().all(|&v| v == 0.0));
        let snips = vec![randn(21, 5, 10), randn(21, 5, 11)];
        let r = embed(&st, &snips, true).unwrap();
        let zero = encode(&st, &Array2::zeros((21, 8))).unwrap();
        for row in r.rows() {
            assert_eq!(row.to_vec(), zero);
        }
    }

    #[test]
    fn batching_is_irrelevant() {
        let st = ModelState::new(&small(), 12).unwrap();
        let snips: Vec<_> = (0..5).map(|i| randn(21, 5, 20 + i)).collect();
        let all = embed(&st, &snips, false).unwrap();
        for (i, s) in snips.iter().enumerate() {
            let one = embed(&st, std::slice::from_ref(s), false).unwrap();
            for (a, b) in one.row(0).iter().zip(all.row(i).iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let st = ModelState::new(&small(), 1).unwrap();
        assert!(embed(&st, &[Array2::zeros((20, 5))], false).is_err());
        assert!(encode(&st, &Array2::zeros((21, 7))).is_err());
    }
}
