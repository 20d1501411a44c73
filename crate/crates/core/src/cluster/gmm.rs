use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::linalg::{chol_logdet, chol_mahalanobis, cholesky};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop when the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    /// Ridge added to every covariance diagonal.
    pub reg: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-3,
            reg: 1e-6,
            seed: 0,
            n_init: 1,
        }
    }
}

/// A fitted full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// K×D
    pub means: Array2<f64>,
    pub covariances: Vec<Array2<f64>>,
    pub converged: bool,
    pub n_iter: usize,
    /// Mean per-sample log-likelihood after fitting.
    pub log_likelihood: f64,
    /// Mean per-sample log-likelihood at every E-step.
    pub history: Vec<f64>,
}

struct Factors {
    log_weights: Vec<f64>,
    chols: Vec<Array2<f64>>,
    log_norms: Vec<f64>,
}

impl GmmModel {
    /// Builds a model from raw parameters; weights are normalised to sum to 1.
    pub fn new(weights: Vec<f64>, means: Array2<f64>, covariances: Vec<Array2<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.nrows() != k || covariances.len() != k {
            return Err(Error::Shape("weights, means and covariances must agree on K".into()));
        }
        let d = means.ncols();
        if covariances.iter().any(|c| c.dim() != (d, d)) {
            return Err(Error::Shape("covariances must be D×D".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Invalid("weights must be non-negative with a positive sum".into()));
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            covariances,
            converged: false,
            n_iter: 0,
            log_likelihood: f64::NAN,
            history: Vec::new(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn factors(&self) -> Result<Factors> {
        let d = self.dim() as f64;
        let mut chols = Vec::with_capacity(self.n_components());
        let mut log_norms = Vec::with_capacity(self.n_components());
        for c in &self.covariances {
            let l = cholesky(c).ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
            log_norms.push(-0.5 * (d * LN_2PI + chol_logdet(&l)));
            chols.push(l);
        }
        Ok(Factors {
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            chols,
            log_norms,
        })
    }

    /// Posterior responsibilities (N×K) and the mean per-sample log-likelihood.
    pub fn responsibilities(&self, x: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!("data has {} columns, model {}", x.ncols(), self.dim())));
        }
        let f = self.factors()?;
        let (n, k, d) = (x.nrows(), self.n_components(), self.dim());
        let mut resp = Array2::zeros((n, k));
        let mut total = 0.0;
        let mut diff = vec![0.0; d];
        let mut work = vec![0.0; d];
        for i in 0..n {
            let row = x.row(i);
            for j in 0..k {
                for t in 0..d {
                    diff[t] = row[t] - self.means[[j, t]];
                }
                let maha = chol_mahalanobis(&f.chols[j], &diff, &mut work);
                resp[[i, j]] = f.log_weights[j] + f.log_norms[j] - 0.5 * maha;
            }
            let mut r = resp.row_mut(i);
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            r.mapv_inplace(|v| (v - lse).exp());
            total += lse;
        }
        Ok((resp, total / n as f64))
    }

    /// Bayesian information criterion on `x` (lower is better).
    pub fn bic(&self, x: &Array2<f64>) -> Result<f64> {
        let (_, ll) = self.responsibilities(x)?;
        let (k, d, n) = (self.n_components() as f64, self.dim() as f64, x.nrows() as f64);
        let params = (k - 1.0) + k * d + k * d * (d + 1.0) / 2.0;
        Ok(-2.0 * ll * n + params * n.ln())
    }
}

fn validate_data(x: &Array2<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Invalid("need at least one component".into()));
    }
    if x.ncols() == 0 {
        return Err(Error::Invalid("data has no columns".into()));
    }
    if x.nrows() <= k {
        return Err(Error::Invalid(format!("need more samples ({}) than components ({k})", x.nrows())));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, the rest with probability
/// proportional to squared distance from the nearest chosen centre.
fn kmeanspp(x: &Array2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centres = Array2::zeros((k, x.ncols()));
    let first = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
    centres.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centres.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let u = rng.random::<f64>();
        let pick = if total > 0.0 {
            let target = u * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            ((u * n as f64) as usize).min(n - 1)
        };
        centres.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centres.row(c)));
        }
    }
    centres
}

fn hard_assign(x: &Array2<f64>, centres: &Array2<f64>) -> Array2<f64> {
    let mut resp = Array2::zeros((x.nrows(), centres.nrows()));
    for i in 0..x.nrows() {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for c in 0..centres.nrows() {
            let d = sq_dist(x.row(i), centres.row(c));
            if d < bd {
                bd = d;
                best = c;
            }
        }
        resp[[i, best]] = 1.0;
    }
    resp
}

fn m_step(x: &Array2<f64>, resp: &Array2<f64>, reg: f64) -> (Vec<f64>, Array2<f64>, Vec<Array2<f64>>) {
    let (n, d) = x.dim();
    let k = resp.ncols();
    let tiny = 10.0 * f64::EPSILON;
    let nk: Vec<f64> = resp.sum_axis(Axis(0)).iter().map(|&v| v + tiny).collect();
    let weights: Vec<f64> = nk.iter().map(|v| v / n as f64).collect();
    let mut means = resp.t().dot(x);
    for (j, mut row) in means.rows_mut().into_iter().enumerate() {
        row /= nk[j];
    }
    let covs = (0..k)
        .map(|j| {
            let mu = means.row(j);
            let mut diff = x - &mu;
            for (mut row, r) in diff.rows_mut().into_iter().zip(resp.column(j)) {
                row *= r.sqrt();
            }
            let mut c = diff.t().dot(&diff) / nk[j];
            for t in 0..d {
                c[[t, t]] += reg;
            }
            c
        })
        .collect();
    (weights, means, covs)
}

fn fit_once(x: &Array2<f64>, k: usize, opts: &GmmOptions, rng: &mut Rng) -> Result<GmmModel> {
    let centres = kmeanspp(x, k, rng);
    let (w, m, c) = m_step(x, &hard_assign(x, &centres), opts.reg);
    let mut model = GmmModel::new(w, m, c)?;
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut history = Vec::new();
    let mut fresh = false;
    for _ in 0..opts.max_iter {
        let (resp, ll) = model.responsibilities(x)?;
        history.push(ll);
        if ll - prev < opts.tol {
            converged = true;
            fresh = true;
            break;
        }
        prev = ll;
        let (w, m, c) = m_step(x, &resp, opts.reg);
        model.weights = w;
        model.means = m;
        model.covariances = c;
    }
    if !fresh {
        let (_, ll) = model.responsibilities(x)?;
        history.push(ll);
    }
    model.converged = converged;
    model.n_iter = history.len();
    model.log_likelihood = *history.last().expect("at least one E-step");
    model.history = history;
    Ok(model)
}

/// EM fit with k-means++ seeding, best of `n_init` restarts by final
/// log-likelihood (earlier restart wins ties).
pub fn gmm_fit(x: &Array2<f64>, k: usize, opts: &GmmOptions) -> Result<GmmModel> {
    validate_data(x, k)?;
    let mut best: Option<GmmModel> = None;
    for init in 0..opts.n_init.max(1) {
        let mut r = rng::substream(opts.seed, &[init as u64]);
        let m = fit_once(x, k, opts, &mut r)?;
        if best.as_ref().is_none_or(|b| m.log_likelihood > b.log_likelihood) {
            best = Some(m);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Component with the highest posterior for each row; ties go to the lower index.
pub fn gmm_assign(model: &GmmModel, x: &Array2<f64>) -> Result<Vec<usize>> {
    let (resp, _) = model.responsibilities(x)?;
    Ok(resp
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Fits K = 1..=k_max and keeps the lowest BIC.
pub fn gmm_fit_bic(x: &Array2<f64>, k_max: usize, opts: &GmmOptions) -> Result<GmmModel> {
    validate_data(x, 1)?;
    let upper = k_max.min(x.nrows() - 1).max(1);
    let mut best: Option<(f64, GmmModel)> = None;
    for k in 1..=upper {
        let m = gmm_fit(x, k, opts)?;
        let b = m.bic(x)?;
        if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
            best = Some((b, m));
        }
    }
    Ok(best.expect("k_max >= 1").1)
}
