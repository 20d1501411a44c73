use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{column_means, symmetric_eigen};
use crate::error::{Error, Result};

/// Above this dimension the leading axes are found by orthogonal iteration
/// instead of a full eigendecomposition.
const DENSE_LIMIT: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// p×D, orthonormal rows.
    pub components: Array2<f64>,
    /// Variances along the principal axes, descending. All D values when the
    /// dense path is used, otherwise the leading p.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

fn fix_sign(mut v: ndarray::ArrayViewMut1<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

/// Modified Gram-Schmidt on the columns of `q`.
fn orthonormalize(q: &mut Array2<f64>) {
    for j in 0..q.ncols() {
        for i in 0..j {
            let d = q.column(i).dot(&q.column(j));
            let ci = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-d, &ci);
        }
        let n = q.column(j).dot(&q.column(j)).sqrt();
        if n > 0.0 {
            q.column_mut(j).mapv_inplace(|v| v / n);
        }
    }
}

/// Leading `p` eigenpairs of `XcᵀXc/(n−1)` without forming the D×D matrix.
fn leading_axes(xc: &Array2<f64>, p: usize) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = xc.dim();
    let denom = (n - 1) as f64;
    let k = (p + 8).min(d);
    // deterministic start: a fixed pseudo-random basis
    let mut q = Array2::from_shape_fn((d, k), |(i, j)| {
        let h = crate::rng::mix(0x5eed, &[i as u64, j as u64]);
        (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    orthonormalize(&mut q);
    let mut prev = vec![0.0; p];
    for _ in 0..1000 {
        let mut z = xc.t().dot(&xc.dot(&q)) / denom;
        orthonormalize(&mut z);
        q = z;
        let aq = xc.t().dot(&xc.dot(&q)) / denom;
        let small = q.t().dot(&aq);
        let (vals, _) = symmetric_eigen(&small);
        let done = vals
            .iter()
            .zip(&prev)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * vals[0].abs().max(1e-300));
        prev = vals[..p].to_vec();
        if done {
            break;
        }
    }
    let aq = xc.t().dot(&xc.dot(&q)) / denom;
    let small = q.t().dot(&aq);
    let (vals, vecs) = symmetric_eigen(&small);
    let axes = q.dot(&vecs);
    (vals[..p].to_vec(), axes.slice(ndarray::s![.., ..p]).to_owned())
}

/// Principal axes of the centred sample covariance (denominator N−1).
pub fn pca_fit(x: &Array2<f64>, p: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if p == 0 || p > d {
        return Err(Error::Invalid(format!("cannot keep {p} components of {d} dimensions")));
    }
    if n < 2 {
        return Err(Error::Invalid("PCA needs at least 2 samples".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mean = column_means(x);
    let xc = x - &mean;
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let (explained_variance, axes) = if d <= DENSE_LIMIT {
        let cov = xc.t().dot(&xc) / (n - 1) as f64;
        let (vals, vecs) = symmetric_eigen(&cov);
        (vals, vecs.slice(ndarray::s![.., ..p]).to_owned())
    } else {
        leading_axes(&xc, p)
    };
    let mut components = axes.reversed_axes().as_standard_layout().to_owned();
    for row in components.rows_mut() {
        fix_sign(row);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained_variance.into_iter().map(|v| v.max(0.0)).collect(),
        total_variance,
    })
}

pub fn pca_transform(model: &PcaModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::Shape(format!("data has {} columns, model {}", x.ncols(), model.mean.len())));
    }
    Ok((x - &model.mean).dot(&model.components.t()))
}

/// Flattens equally shaped arrays into the rows of one matrix.
pub fn flatten_rows(items: &[Array2<f64>]) -> Array2<f64> {
    let d = items.first().map_or(0, |a| a.len());
    let mut out = Array2::zeros((items.len(), d));
    for (mut row, a) in out.axis_iter_mut(Axis(0)).zip(items) {
        row.assign(&Array1::from_iter(a.iter().copied()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn ellipse(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 5), |(i, c)| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            match c {
                1 => 3.0 * t.cos(),
                3 => t.sin(),
                _ => 0.0,
            }
        })
    }

    #[test]
    fn axis_aligned_ellipse() {
        let m = pca_fit(&ellipse(200), 2).unwrap();
        assert!((m.components[[0, 1]] - 1.0).abs() < 1e-9);
        assert!((m.components[[1, 3]] - 1.0).abs() < 1e-9);
        assert!(m.explained_variance[2..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mean_maps_to_origin() {
        let x = ellipse(50);
        let m = pca_fit(&x, 2).unwrap();
        let mu = m.mean.clone().insert_axis(Axis(0));
        assert!(pca_transform(&m, &mu).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng_from(seed);
        let scales: Vec<f64> = (0..d).map(|i| 1.0 + i as f64).collect();
        Array2::from_shape_fn((n, d), |(_, c)| {
            let e: f64 = StandardNormal.sample(&mut r);
            e * scales[c]
        })
    }

    #[test]
    fn variance_is_preserved_and_ordered() {
        let x = random(100, 6, 1);
        let m = pca_fit(&x, 3).unwrap();
        let sum: f64 = m.explained_variance.iter().sum();
        assert!((sum - m.total_variance).abs() < 1e-9);
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let g = m.components.dot(&m.components.t());
        assert!(g.iter().zip(Array2::<f64>::eye(3).iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn sign_convention() {
        let m = pca_fit(&random(80, 4, 2), 4).unwrap();
        for row in m.components.rows() {
            let big = row.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn iterative_path_matches_dense() {
        let mut r = rng_from(3);
        let basis = Array2::from_shape_fn((3, 200), |_| StandardNormal.sample(&mut r));
        let coeff = Array2::from_shape_fn((60, 3), |(_, c)| {
            let e: f64 = StandardNormal.sample(&mut r);
            e * [10.0, 5.0, 1.0][c]
        });
        let noise = Array2::from_shape_fn((60, 200), |_| {
            let e: f64 = StandardNormal.sample(&mut r);
            0.01 * e
        });
        let x = coeff.dot(&basis) + noise;
        let it = pca_fit(&x, 2).unwrap();
        let mean = column_means(&x);
        let xc = &x - &mean;
        let cov = xc.t().dot(&xc) / 59.0;
        let (vals, _) = symmetric_eigen(&cov);
        for i in 0..2 {
            assert!((it.explained_variance[i] - vals[i]).abs() < 1e-8 * vals[0]);
        }
        let g = it.components.dot(&it.components.t());
        assert!(g.iter().zip(Array2::<f64>::eye(2).iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn too_many_components_rejected() {
        assert!(pca_fit(&random(10, 3, 4), 4).is_err());
    }
}
