//! Small robust-statistics helpers shared across stages.

/// Median of a slice; reorders the slice. Returns 0 for empty input.
pub fn median_in_place(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (_, m, _) = xs.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = xs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    median_in_place(&mut v)
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    let m = median_in_place(&mut v);
    for x in v.iter_mut() {
        *x = (*x - m).abs();
    }
    median_in_place(&mut v)
}

/// Gaussian-consistent noise level: 1.4826 · MAD.
pub fn robust_sigma(xs: &[f64]) -> f64 {
    1.4826 * mad(xs)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean, sample std / √n.
pub fn sem(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        sample_std(xs) / (xs.len() as f64).sqrt()
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    #[test]
    fn mad_of_symmetric_set() {
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1.0);
    }

    #[test]
    fn sem_matches_definition() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let s = (5.0f64 / 3.0).sqrt();
        assert!((sem(&xs) - s / 2.0).abs() < 1e-15);
    }
}
