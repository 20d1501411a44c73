use ndarray::Array2;

use crate::error::{Error, Result};

fn check(q: &Array2<f64>, k: &Array2<f64>) -> Result<()> {
    if q.dim() != k.dim() {
        return Err(Error::Shape(format!("queries {:?} vs keys {:?}", q.dim(), k.dim())));
    }
    if q.nrows() < 2 {
        return Err(Error::Invalid("contrastive loss needs at least 2 rows".into()));
    }
    Ok(())
}

/// Row-softmax of `q·kᵀ/τ` and the mean negative log-probability of the
/// diagonal.
fn forward(q: &Array2<f64>, k: &Array2<f64>, tau: f64) -> (f64, Array2<f64>) {
    let mut p = q.dot(&k.t()) / tau;
    let b = q.nrows();
    let mut loss = 0.0;
    for (i, mut row) in p.rows_mut().into_iter().enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[i];
        row.mapv_inplace(|v| (v - lse).exp());
    }
    (loss / b as f64, p)
}

/// InfoNCE with positives on the diagonal and the other keys as negatives.
/// Rows of `q` and `k` are expected to be L2-normalised.
pub fn info_nce(q: &Array2<f64>, k: &Array2<f64>, tau: f64) -> Result<f64> {
    check(q, k)?;
    Ok(forward(q, k, tau).0)
}

/// Loss and its gradient with respect to `q` (keys are constants).
pub fn info_nce_with_grad(q: &Array2<f64>, k: &Array2<f64>, tau: f64) -> Result<(f64, Array2<f64>)> {
    check(q, k)?;
    let (loss, mut p) = forward(q, k, tau);
    let b = q.nrows();
    for i in 0..b {
        p[[i, i]] -= 1.0;
    }
    let dq = p.dot(k) / (b as f64 * tau);
    Ok((loss, dq))
}

/// Mean squared error over all entries.
pub fn denoise_loss(v: &Array2<f64>, v_hat: &Array2<f64>) -> Result<f64> {
    if v.dim() != v_hat.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", v.dim(), v_hat.dim())));
    }
    let n = v.len() as f64;
    Ok(v.iter().zip(v_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}
