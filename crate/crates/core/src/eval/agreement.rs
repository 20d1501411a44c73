use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table. Returns 1 when both
/// labelings are trivial in the same way (the index is then undefined).
pub fn adjusted_rand_index<A: Ord + Clone, B: Ord + Clone>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("ARI needs at least 2 items".into()));
    }
    let mut table: BTreeMap<(A, B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x.clone(), y.clone())).or_default() += 1;
        *rows.entry(x.clone()).or_default() += 1;
        *cols.entry(y.clone()).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sa: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sb: f64 = cols.values().map(|&n| comb2(n)).sum();
    let expected = sa * sb / comb2(a.len() as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mean silhouette with Euclidean distances. Points in singleton clusters
/// score 0, as does a point whose `a` and `b` are both 0.
pub fn silhouette_score<L: Ord + Clone>(x: &Array2<f64>, labels: &[L]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let mut ids: BTreeMap<L, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l.clone()).or_insert(next);
    }
    let k = ids.len();
    if k < 2 {
        return Err(Error::Invalid("silhouette needs at least 2 clusters".into()));
    }
    let lab: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut sizes = vec![0usize; k];
    for &l in &lab {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = x.row(i);
        for j in 0..n {
            if i != j {
                let d: f64 = xi.iter().zip(x.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                sums[lab[j]] += d;
            }
        }
        let own = lab[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pair-counting definition over all unordered pairs.
    fn ari_brute(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let pairs: f64 = both + only_a + only_b + neither;
        let expected = (both + only_a) * (both + only_b) / pairs;
        let max = ((both + only_a) + (both + only_b)) / 2.0;
        (both - expected) / (max - expected)
    }

    #[test]
    fn four_point_example() {
        let a = [0, 0, 1, 1];
        let b = [0, 0, 1, 2];
        let v = adjusted_rand_index(&a, &b).unwrap();
        assert!((v - 4.0 / 7.0).abs() < 1e-12);
        assert!((v - ari_brute(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn identical_and_renamed() {
        let a = [3, 1, 1, 2, 3, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let renamed = ["x", "y", "y", "z", "x", "z"];
        assert_eq!(adjusted_rand_index(&a, &renamed).unwrap(), 1.0);
        assert!(adjusted_rand_index(&a, &a[..3]).is_err());
    }

    #[test]
    fn random_labelings_average_zero() {
        let mut r = rng_from(1);
        let trials = 1000;
        let mean = (0..trials)
            .map(|_| {
                let a: Vec<u8> = (0..100).map(|_| r.random_range(0..4)).collect();
                let b: Vec<u8> = (0..100).map(|_| r.random_range(0..4)).collect();
                adjusted_rand_index(&a, &b).unwrap()
            })
            .sum::<f64>()
            / trials as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting(a in proptest::collection::vec(0usize..4, 2..30), seed in 0u64..1000) {
            let mut r = rng_from(seed);
            let b: Vec<usize> = a.iter().map(|_| r.random_range(0..3)).collect();
            let v = adjusted_rand_index(&a, &b).unwrap();
            prop_assert!(v <= 1.0 + 1e-12);
            let brute = ari_brute(&a, &b);
            if brute.is_finite() {
                prop_assert!((v - brute).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn far_clusters_score_near_one() {
        let mut x = Array2::zeros((20, 2));
        let mut r = rng_from(2);
        for i in 0..20 {
            let off = if i < 10 { 0.0 } else { 1000.0 };
            x[[i, 0]] = off + r.random::<f64>();
            x[[i, 1]] = r.random::<f64>();
        }
        let labels: Vec<u8> = (0..20).map(|i| (i >= 10) as u8).collect();
        assert!(silhouette_score(&x, &labels).unwrap() > 0.99);
    }

    #[test]
    fn identical_points_score_zero() {
        let x = Array2::ones((6, 3));
        assert_eq!(silhouette_score(&x, &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn rotation_invariant() {
        let mut r = rng_from(3);
        let x = Array2::from_shape_fn((15, 2), |_| r.random::<f64>());
        let labels: Vec<u8> = (0..15).map(|i| (i % 3) as u8).collect();
        let th: f64 = 0.7;
        let rot = ndarray::array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let a = silhouette_score(&x, &labels).unwrap();
        let b = silhouette_score(&x.dot(&rot), &labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn singletons_contribute_zero() {
        let x = ndarray::array![[0.0], [0.1], [5.0]];
        let s = silhouette_score(&x, &[0, 0, 1]).unwrap();
        let a0 = 0.1;
        let b0 = 5.0;
        let a1 = 0.1;
        let b1 = 4.9;
        let want = ((b0 - a0) / b0 + (b1 - a1) / b1) / 3.0;
        assert!((s - want).abs() < 1e-12);
        assert!(silhouette_score(&x, &[1, 1, 1]).is_err());
    }
}
