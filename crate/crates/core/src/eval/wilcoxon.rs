use serde::Serialize;

use crate::error::{Error, Result};

/// Largest number of non-zero pairs for which the exact null distribution
/// is used.
pub const EXACT_LIMIT: usize = 25;
const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`
    pub statistic: f64,
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Mid-ranks of `xs` (1-based).
fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped and tied magnitudes get mid-ranks. The p-value is exact for
/// up to [`EXACT_LIMIT`] pairs, otherwise a normal approximation with tie
/// and continuity corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if let Some(i) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = d.len();
    if n < MIN_PAIRS {
        return Err(Error::Invalid(format!("need at least {MIN_PAIRS} non-zero differences, got {n}")));
    }
    let ranks = mid_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    if n <= EXACT_LIMIT {
        // doubled ranks are integers even with mid-ranks
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let w = (2.0 * statistic).round() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let p = (2.0 * lower).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = libm::erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult {
        statistic,
        p_value: p,
        n,
        exact: false,
    })
}
