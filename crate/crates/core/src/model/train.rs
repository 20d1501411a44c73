use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::Serialize;

use super::loss::info_nce_with_grad;
use super::net::{Graph, View};
use super::optim::{adamw_step, lr_at, momentum_update};
use super::{ModelState, TrainConfig};
use crate::augment::{make_view_pair, AugmentSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Per-sample gradient accumulation chunk. Fixed so the summation order,
/// and therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// The three padded inputs of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainViews {
    pub view1: View,
    pub view2: View,
    pub clean: View,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLosses {
    /// Symmetrised contrastive loss (sum of both directions).
    pub contrastive: f64,
    pub denoise: f64,
    /// `contrastive + α · denoise`
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub losses: StepLosses,
    /// One gradient per parameter tensor; target tensors are always zero.
    pub grads: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_contrastive: f64,
    pub loss_denoise: f64,
    pub lr: f64,
}

/// View pairs for a batch. Each sample draws from its own stream keyed by
/// `(seed, step, index)`; the batch itself is the collision donor pool.
pub fn make_batch_views(snippets: &[Array2<f64>], aug: &AugmentSpec, seed: u64, step: u64) -> Vec<TrainViews> {
    let base = rng::named(seed, "views");
    snippets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng::substream(base, &[step, i as u64]);
            let vp = make_view_pair(s, snippets, aug, &mut r);
            let c = s.ncols();
            TrainViews {
                view1: View::from_crop(&vp.view1, &vp.channels1, c),
                view2: View::from_crop(&vp.view2, &vp.channels2, c),
                clean: View::from_crop(&vp.clean, &vp.channels1, c),
            }
        })
        .collect()
}

struct Forward {
    q1: Vec<f64>,
    q2: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    mse: f64,
}

fn forward_no_grad(state: &ModelState, v: &TrainViews) -> Forward {
    let (layout, cfg) = (&state.layout, &state.config);
    let mut g = Graph::new(state, false);
    let e1 = g.conv(layout, cfg, &v.view1);
    let e2 = g.conv(layout, cfg, &v.view2);
    let q1 = g.query(layout, cfg, e1);
    let q2 = g.query(layout, cfg, e2);
    let k1 = g.key(layout, cfg, e1);
    let k2 = g.key(layout, cfg, e2);
    let clean = g.conv(layout, cfg, &v.clean);
    let vh = g.dae(&layout.dae, e1);
    let mse = g.tape.mse(vh, clean);
    let row = |x| g.tape.value(x).row(0).to_vec();
    Forward {
        q1: row(q1),
        q2: row(q2),
        k1: row(k1),
        k2: row(k2),
        mse: g.tape.value(mse)[[0, 0]],
    }
}

/// Accumulates the online gradients of one sample into `acc`.
fn backward_one(state: &ModelState, v: &TrainViews, dq1: &[f64], dq2: &[f64], mse_weight: f64, acc: &mut [Array2<f64>]) {
    let (layout, cfg) = (&state.layout, &state.config);
    let mut g = Graph::new(state, true);
    let e1 = g.conv(layout, cfg, &v.view1);
    let e2 = g.conv(layout, cfg, &v.view2);
    let q1 = g.query(layout, cfg, e1);
    let q2 = g.query(layout, cfg, e2);
    let row = |x: &[f64]| Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
    let mut seeds = vec![(q1, row(dq1)), (q2, row(dq2))];
    if mse_weight != 0.0 {
        let clean = g.conv(layout, cfg, &v.clean);
        let vh = g.dae(&layout.dae, e1);
        let mse = g.tape.mse(vh, clean);
        seeds.push((mse, Array2::from_elem((1, 1), mse_weight)));
    }
    for (idx, grad) in g.tape.backward(&seeds) {
        debug_assert!(idx < layout.n_trainable);
        acc[idx] += &grad;
    }
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, b: usize, d: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((b, d), flat).expect("row lengths agree")
}

fn forward_batch(state: &ModelState, views: &[TrainViews]) -> Vec<Forward> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        views.par_iter().map(|v| forward_no_grad(state, v)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        views.iter().map(|v| forward_no_grad(state, v)).collect()
    }
}

/// Total loss and its gradient for fixed views. Keys are treated as
/// constants (no gradient reaches the target network or, through the keys,
/// the convolution).
pub fn loss_and_grad(state: &ModelState, views: &[TrainViews]) -> Result<GradResult> {
    let b = views.len();
    if b < 2 {
        return Err(Error::Invalid("batch needs at least 2 samples".into()));
    }
    let cfg = &state.config;
    let p = cfg.proj_dim;
    let fw = forward_batch(state, views);
    let q1 = stack(fw.iter().map(|f| f.q1.clone()), b, p);
    let q2 = stack(fw.iter().map(|f| f.q2.clone()), b, p);
    let k1 = stack(fw.iter().map(|f| f.k1.clone()), b, p);
    let k2 = stack(fw.iter().map(|f| f.k2.clone()), b, p);
    let (l12, dq1) = info_nce_with_grad(&q1, &k2, cfg.temperature)?;
    let (l21, dq2) = info_nce_with_grad(&q2, &k1, cfg.temperature)?;
    let denoise = fw.iter().map(|f| f.mse).sum::<f64>() / b as f64;
    let contrastive = l12 + l21;
    let total = contrastive + cfg.alpha * denoise;
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss at step {}: contrastive {contrastive}, denoise {denoise}",
            state.step
        )));
    }
    let mse_weight = cfg.alpha / b as f64;
    let zeros = || -> Vec<Array2<f64>> { state.params.iter().map(|p| Array2::zeros(p.dim())).collect() };
    let chunk = |start: usize| {
        let mut acc = zeros();
        for i in start..(start + GRAD_CHUNK).min(b) {
            backward_one(
                state,
                &views[i],
                dq1.slice(s![i, ..]).as_slice().expect("contiguous"),
                dq2.slice(s![i, ..]).as_slice().expect("contiguous"),
                mse_weight,
                &mut acc,
            );
        }
        acc
    };
    let starts: Vec<usize> = (0..b).step_by(GRAD_CHUNK).collect();
    #[cfg(feature = "parallel")]
    let partial: Vec<Vec<Array2<f64>>> = {
        use rayon::prelude::*;
        starts.par_iter().map(|&s| chunk(s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partial: Vec<Vec<Array2<f64>>> = starts.iter().map(|&s| chunk(s)).collect();
    let mut grads = zeros();
    for part in partial {
        for (g, p) in grads.iter_mut().zip(part) {
            *g += &p;
        }
    }
    Ok(GradResult {
        losses: StepLosses {
            contrastive,
            denoise,
            total,
        },
        grads,
    })
}

/// Losses of a batch without any update.
pub fn batch_losses(state: &ModelState, views: &[TrainViews]) -> Result<StepLosses> {
    let b = views.len();
    let cfg = &state.config;
    let p = cfg.proj_dim;
    let fw = forward_batch(state, views);
    let q1 = stack(fw.iter().map(|f| f.q1.clone()), b, p);
    let q2 = stack(fw.iter().map(|f| f.q2.clone()), b, p);
    let k1 = stack(fw.iter().map(|f| f.k1.clone()), b, p);
    let k2 = stack(fw.iter().map(|f| f.k2.clone()), b, p);
    let contrastive = super::info_nce(&q1, &k2, cfg.temperature)? + super::info_nce(&q2, &k1, cfg.temperature)?;
    let denoise = fw.iter().map(|f| f.mse).sum::<f64>() / b as f64;
    Ok(StepLosses {
        contrastive,
        denoise,
        total: contrastive + cfg.alpha * denoise,
    })
}

/// Target-network keys `(k1, k2)` of a batch, one row per sample.
pub fn target_keys(state: &ModelState, views: &[TrainViews]) -> (Array2<f64>, Array2<f64>) {
    let (b, p) = (views.len(), state.config.proj_dim);
    let fw = forward_batch(state, views);
    (
        stack(fw.iter().map(|f| f.k1.clone()), b, p),
        stack(fw.iter().map(|f| f.k2.clone()), b, p),
    )
}

/// Losses with the keys held fixed. This is the function whose gradient
/// [`loss_and_grad`] returns.
pub fn losses_with_keys(
    state: &ModelState,
    views: &[TrainViews],
    k1: &Array2<f64>,
    k2: &Array2<f64>,
) -> Result<StepLosses> {
    let b = views.len();
    let cfg = &state.config;
    let p = cfg.proj_dim;
    if k1.dim() != (b, p) || k2.dim() != (b, p) {
        return Err(Error::Shape(format!("keys must be {b}x{p}")));
    }
    let fw = forward_batch(state, views);
    let q1 = stack(fw.iter().map(|f| f.q1.clone()), b, p);
    let q2 = stack(fw.iter().map(|f| f.q2.clone()), b, p);
    let contrastive = super::info_nce(&q1, k2, cfg.temperature)? + super::info_nce(&q2, k1, cfg.temperature)?;
    let denoise = fw.iter().map(|f| f.mse).sum::<f64>() / b as f64;
    Ok(StepLosses {
        contrastive,
        denoise,
        total: contrastive + cfg.alpha * denoise,
    })
}

/// One optimisation step on `batch` at learning rate `lr`, followed by the
/// momentum update of the target network.
pub fn train_step(
    state: &mut ModelState,
    batch: &[Array2<f64>],
    aug: &AugmentSpec,
    tc: &TrainConfig,
    lr: f64,
) -> Result<StepLosses> {
    let views = make_batch_views(batch, aug, state.seed, state.step);
    let res = loss_and_grad(state, &views)?;
    adamw_step(state, &res.grads, lr, tc.weight_decay);
    let m = state.config.momentum;
    momentum_update(state, m);
    if !state.all_finite() {
        return Err(Error::Numerical(format!("non-finite parameters after step {}", state.step)));
    }
    Ok(res.losses)
}

fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(rng::named(seed, "shuffle"), &[epoch as u64]));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Trains for `tc.epochs` epochs (resuming from `state.step` if it is
/// non-zero). `on_epoch` sees each epoch's mean losses.
pub fn train(
    state: &mut ModelState,
    snippets: &[Array2<f64>],
    aug: &AugmentSpec,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    tc.validate()?;
    aug.validate_for(state.config.snippet_t, state.config.snippet_c)?;
    if snippets.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 training snippets, got {}", snippets.len())));
    }
    for s in snippets {
        if s.dim() != (state.config.snippet_t, state.config.snippet_c) {
            return Err(Error::Shape(format!("training snippet is {:?}", s.dim())));
        }
    }
    let spe = epoch_batches(snippets.len(), tc.batch_size, 0, 0).len();
    let first_epoch = state.step as usize / spe;
    let mut logs = Vec::new();
    for epoch in first_epoch..tc.epochs {
        let mut sum_c = 0.0;
        let mut sum_d = 0.0;
        let mut lr = 0.0;
        let batches = epoch_batches(snippets.len(), tc.batch_size, tc.seed, epoch);
        for idx in &batches {
            let batch: Vec<Array2<f64>> = idx.iter().map(|&i| snippets[i].clone()).collect();
            lr = lr_at(state.step as usize + 1, tc, spe);
            let l = train_step(state, &batch, aug, tc, lr)?;
            sum_c += l.contrastive;
            sum_d += l.denoise;
        }
        let n = batches.len() as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            loss_contrastive: sum_c / n,
            loss_denoise: sum_d / n,
            lr,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny() -> ModelConfig {
        ModelConfig {
            snippet_t: 15,
            snippet_c: 5,
            conv_kernel: 3,
            embed_dim: 8,
            n_heads: 2,
            ff_dim: 8,
            rep_dim: 4,
            proj_dim: 6,
            pred_hidden_dim: 6,
            dae_hidden_dim: 6,
            input_scale: 1.0,
            ..ModelConfig::default()
        }
    }

    fn snippets(n: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut r = rng_from(seed);
        (0..n)
            .map(|_| Array2::from_shape_fn((15, 5), |_| StandardNormal.sample(&mut r)))
            .collect()
    }

    fn aug() -> AugmentSpec {
        AugmentSpec {
            crop_channels: 3,
            temporal_jitter_max: 2,
            collision_offset_max: 3,
            ..AugmentSpec::default()
        }
    }

    #[test]
    fn targets_receive_no_gradient() {
        let st = ModelState::new(&tiny(), 1).unwrap();
        let views = make_batch_views(&snippets(4, 2), &aug(), 0, 0);
        let r = loss_and_grad(&st, &views).unwrap();
        for i in st.target_indices() {
            assert!(r.grads[i].iter().all(|&v| v == 0.0));
        }
        assert!(r.grads[st.layout.conv_w].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn alpha_zero_total_is_contrastive() {
        let cfg = ModelConfig { alpha: 0.0, ..tiny() };
        let st = ModelState::new(&cfg, 1).unwrap();
        let views = make_batch_views(&snippets(4, 3), &aug(), 0, 0);
        let l = loss_and_grad(&st, &views).unwrap().losses;
        assert_eq!(l.total, l.contrastive);
    }

    #[test]
    fn batch_losses_agree_with_gradient_pass() {
        let st = ModelState::new(&tiny(), 1).unwrap();
        let views = make_batch_views(&snippets(5, 4), &aug(), 0, 0);
        assert_eq!(batch_losses(&st, &views).unwrap(), loss_and_grad(&st, &views).unwrap().losses);
    }

    #[test]
    fn step_is_deterministic() {
        let data = snippets(6, 5);
        let tc = TrainConfig {
            epochs: 3,
            warmup_epochs: 1,
            batch_size: 4,
            peak_lr: 1e-3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut st = ModelState::new(&tiny(), 9).unwrap();
            let logs = train(&mut st, &data, &aug(), &tc, |_| {}).unwrap();
            (st, logs)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a.params, b.params);
        assert_eq!(la, lb);
        assert_eq!(a.step, 6);
    }

    #[test]
    fn momentum_one_freezes_target_during_training() {
        let cfg = ModelConfig { momentum: 1.0, ..tiny() };
        let mut st = ModelState::new(&cfg, 2).unwrap();
        let before = st.params.clone();
        let data = snippets(4, 6);
        train_step(&mut st, &data, &aug(), &TrainConfig::default(), 1e-3).unwrap();
        for i in st.target_indices() {
            assert_eq!(st.params[i], before[i]);
        }
        assert_ne!(st.params[st.layout.conv_w], before[st.layout.conv_w]);
    }

    #[test]
    fn too_small_batch_rejected() {
        let st = ModelState::new(&tiny(), 1).unwrap();
        let views = make_batch_views(&snippets(1, 4), &aug(), 0, 0);
        assert!(loss_and_grad(&st, &views).is_err());
    }
}
