use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use serde::Serialize;

use super::agreement::{adjusted_rand_index, silhouette_score};
use crate::cluster::{gmm_assign, gmm_fit, pca_fit, pca_transform, GmmOptions};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolResult {
    pub n_units: usize,
    pub gmm_runs: usize,
    /// Mean ARI over GMM runs, one per seed, in seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    pub max: f64,
    pub min: f64,
}

impl ProtocolResult {
    /// One table row: `name  mean±sem  max  min`.
    pub fn table_row(&self, name: &str) -> String {
        format!("{name:<24} {:.4}±{:.4}  {:.4}  {:.4}", self.mean, self.sem, self.max, self.min)
    }

    pub fn to_table(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:<15} {:<7} {:<7}", "method", "ARI mean±SEM", "max", "min");
        let _ = writeln!(s, "{}", self.table_row(name));
        s
    }
}

/// Unit-sampling evaluation. For every seed, `n_units` units are drawn from
/// `pool` (one representation matrix per unit), their rows are clustered
/// with `K = n_units` for `gmm_runs` GMM seeds, and the ARIs against unit
/// identity are averaged into one value.
pub fn protocol_ari(
    pool: &[Array2<f64>],
    n_units: usize,
    seeds: &[u64],
    gmm_runs: usize,
    opts: &GmmOptions,
) -> Result<ProtocolResult> {
    if n_units == 0 || pool.len() < n_units {
        return Err(Error::Invalid(format!(
            "unit pool of {} cannot supply {n_units} units",
            pool.len()
        )));
    }
    if seeds.is_empty() || gmm_runs == 0 {
        return Err(Error::Invalid("need at least one seed and one GMM run".into()));
    }
    let d = pool[0].ncols();
    if pool.iter().any(|m| m.ncols() != d || m.nrows() == 0) {
        return Err(Error::Shape("every unit needs a non-empty matrix of equal width".into()));
    }
    let one_seed = |seed: u64| -> Result<f64> {
        let mut r = rng::substream(rng::named(seed, "protocol"), &[]);
        let mut units = sample(&mut r, pool.len(), n_units).into_vec();
        units.sort_unstable();
        let views: Vec<_> = units.iter().map(|&u| pool[u].view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let labels: Vec<usize> = units
            .iter()
            .enumerate()
            .flat_map(|(i, &u)| std::iter::repeat_n(i, pool[u].nrows()))
            .collect();
        let mut sum = 0.0;
        for run in 0..gmm_runs {
            let o = GmmOptions {
                seed: seed * 1000 + run as u64,
                ..*opts
            };
            let m = gmm_fit(&x, n_units, &o)?;
            sum += adjusted_rand_index(&labels, &gmm_assign(&m, &x)?)?;
        }
        Ok(sum / gmm_runs as f64)
    };
    #[cfg(feature = "parallel")]
    let per_seed: Vec<Result<f64>> = {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| one_seed(s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_seed: Vec<Result<f64>> = seeds.iter().map(|&s| one_seed(s)).collect();
    let per_seed: Vec<f64> = per_seed.into_iter().collect::<Result<_>>()?;
    Ok(ProtocolResult {
        n_units,
        gmm_runs,
        mean: stats::mean(&per_seed),
        sem: if per_seed.len() > 1 { stats::sem(&per_seed) } else { 0.0 },
        max: per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: per_seed.iter().copied().fold(f64::INFINITY, f64::min),
        per_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    /// Distance between test and train centroids in the shared PCA plane.
    pub centroid_distance: f64,
    /// Silhouette of the GMM clustering of the test set; absent when fewer
    /// than two clusters were found.
    pub silhouette: Option<f64>,
    /// ARI against test labels; absent without labels or with a single unit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    pub pca_dims: usize,
    pub n_clusters: usize,
}

/// Domain-shift statistics between training and test representations.
pub fn ablation_report(
    train: &Array2<f64>,
    test: &Array2<f64>,
    test_labels: Option<&[u32]>,
    n_clusters: usize,
    pca_dims: usize,
    opts: &GmmOptions,
) -> Result<AblationReport> {
    if train.nrows() == 0 || test.nrows() == 0 {
        return Err(Error::Invalid("ablation needs non-empty train and test sets".into()));
    }
    if train.ncols() != test.ncols() {
        return Err(Error::Shape("train and test widths differ".into()));
    }
    if let Some(l) = test_labels {
        if l.len() != test.nrows() {
            return Err(Error::Shape(format!("{} labels for {} test rows", l.len(), test.nrows())));
        }
    }
    let union = ndarray::concatenate(Axis(0), &[train.view(), test.view()]).expect("equal widths");
    let pca = pca_fit(&union, pca_dims)?;
    let centroid = |m: &Array2<f64>| -> Result<Array1<f64>> {
        Ok(pca_transform(&pca, m)?.mean_axis(Axis(0)).expect("non-empty"))
    };
    let diff = centroid(test)? - centroid(train)?;
    let centroid_distance = diff.dot(&diff).sqrt();

    let distinct_labels = test_labels.map(|l| {
        let mut u = l.to_vec();
        u.sort_unstable();
        u.dedup();
        u.len()
    });
    let k = n_clusters.min(test.nrows().saturating_sub(1));
    let (silhouette, ari, found) = if k >= 1 {
        let m = gmm_fit(test, k, opts)?;
        let pred = gmm_assign(&m, test)?;
        let mut used = pred.clone();
        used.sort_unstable();
        used.dedup();
        let sil = if used.len() >= 2 { Some(silhouette_score(test, &pred)?) } else { None };
        let ari = match (test_labels, distinct_labels) {
            (Some(l), Some(n)) if n >= 2 => Some(adjusted_rand_index(l, &pred)?),
            _ => None,
        };
        (sil, ari, used.len())
    } else {
        (None, None, 0)
    };
    Ok(AblationReport {
        centroid_distance,
        silhouette,
        ari,
        pca_dims,
        n_clusters: found,
    })
}
