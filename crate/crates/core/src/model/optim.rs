use ndarray::{Array2, Zip};

use super::{ModelState, TrainConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Learning rate at optimizer step `step`: a linear ramp from 0 to
/// `peak_lr` over the warmup epochs, then cosine decay to 0 at the last
/// epoch. Steps past the end return 0.
pub fn lr_at(step: usize, tc: &TrainConfig, steps_per_epoch: usize) -> f64 {
    let spe = steps_per_epoch.max(1);
    let warm = tc.warmup_epochs * spe;
    let total = tc.epochs * spe;
    if step >= total {
        return 0.0;
    }
    if step < warm {
        return tc.peak_lr * step as f64 / warm as f64;
    }
    let frac = (step - warm) as f64 / (total - warm) as f64;
    tc.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// One AdamW update of the trainable tensors with decoupled weight decay.
pub(crate) fn adamw_step(state: &mut ModelState, grads: &[Array2<f64>], lr: f64, weight_decay: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for i in 0..state.layout.n_trainable {
        let wd = if state.decay[i] { weight_decay } else { 0.0 };
        Zip::from(&mut state.params[i])
            .and(&mut state.adam_m[i])
            .and(&mut state.adam_v[i])
            .and(&grads[i])
            .for_each(|p, m, v, &g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * (mh / (vh.sqrt() + EPS) + wd * *p);
            });
    }
}

/// `target ← m·target + (1 − m)·online`, elementwise.
pub fn momentum_update(state: &mut ModelState, m: f64) {
    for (o, t) in state.layout.target_pairs() {
        if m == 1.0 {
            continue;
        }
        debug_assert!(o < t, "target tensors follow online tensors");
        let (a, b) = state.params.split_at_mut(t);
        let (online, target) = (&a[o], &mut b[0]);
        if m == 0.0 {
            target.assign(online);
        } else {
            Zip::from(target).and(online).for_each(|x, &y| *x = m * *x + (1.0 - m) * y);
        }
    }
}
