//! View generation for contrastive training.
//!
//! Snippets are T×C arrays whose channel axis is ordered by distance from
//! the peak channel. Each view is produced by the fixed chain
//! jitter → channel crop → collision, and the first view of a pair
//! additionally receives temporally correlated noise. Cropped views keep
//! their original channel positions so they can be zero-padded back to C
//! with a mask.

use ndarray::{Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    /// Multiplicative gain range.
    pub voltage_jitter_range: (f64, f64),
    /// Largest temporal shift in samples.
    pub temporal_jitter_max: usize,
    pub crop_channels: usize,
    pub collision_prob: f64,
    pub collision_scale_range: (f64, f64),
    pub collision_offset_max: usize,
    /// Noise amplitude range in units of the snippet's MAD.
    pub noise_scale_range: (f64, f64),
    pub noise_ar_coeff: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            voltage_jitter_range: (0.9, 1.1),
            temporal_jitter_max: 4,
            crop_channels: 11,
            collision_prob: 0.5,
            collision_scale_range: (0.2, 1.0),
            collision_offset_max: 30,
            noise_scale_range: (0.5, 2.0),
            noise_ar_coeff: 0.9,
        }
    }
}

impl AugmentSpec {
    /// A spec under which every augmentation is the identity.
    pub fn identity(crop_channels: usize) -> Self {
        Self {
            voltage_jitter_range: (1.0, 1.0),
            temporal_jitter_max: 0,
            crop_channels,
            collision_prob: 0.0,
            collision_scale_range: (0.0, 0.0),
            collision_offset_max: 0,
            noise_scale_range: (0.0, 0.0),
            noise_ar_coeff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0 {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} range ({lo}, {hi}) must be ordered and non-negative")))
            }
        };
        ordered("voltage jitter", self.voltage_jitter_range)?;
        ordered("collision scale", self.collision_scale_range)?;
        ordered("noise scale", self.noise_scale_range)?;
        if self.crop_channels == 0 || self.crop_channels % 2 == 0 {
            return Err(Error::Invalid(format!("crop_channels must be odd and >= 1, got {}", self.crop_channels)));
        }
        if !(0.0..=1.0).contains(&self.collision_prob) {
            return Err(Error::Invalid(format!("collision_prob {} outside [0, 1]", self.collision_prob)));
        }
        if !(0.0..1.0).contains(&self.noise_ar_coeff) {
            return Err(Error::Invalid(format!("noise_ar_coeff {} outside [0, 1)", self.noise_ar_coeff)));
        }
        Ok(())
    }

    /// Checks the spec against a snippet shape.
    pub fn validate_for(&self, t: usize, c: usize) -> Result<()> {
        self.validate()?;
        if self.crop_channels > c {
            return Err(Error::Invalid(format!("crop_channels {} exceeds snippet channels {c}", self.crop_channels)));
        }
        if 2 * self.temporal_jitter_max >= t.saturating_sub(1).max(1) && self.temporal_jitter_max > 0 {
            return Err(Error::Invalid(format!(
                "temporal_jitter_max {} must be below (T-1)/2",
                self.temporal_jitter_max
            )));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn uniform_shift(rng: &mut Rng, max: usize) -> i64 {
    if max == 0 {
        0
    } else {
        rng.random_range(-(max as i64)..=max as i64)
    }
}

/// Moves every channel by `delta` samples (positive = later), filling the
/// vacated margin with the nearest retained sample.
pub fn shift_edge_padded(s: &Array2<f64>, delta: i64) -> Array2<f64> {
    let t = s.nrows() as i64;
    Array2::from_shape_fn(s.dim(), |(i, c)| {
        let src = (i as i64 - delta).clamp(0, t - 1) as usize;
        s[[src, c]]
    })
}

/// Moves every channel by `delta` samples with zero fill.
pub fn shift_zero_padded(s: &Array2<f64>, delta: i64) -> Array2<f64> {
    let t = s.nrows() as i64;
    Array2::from_shape_fn(s.dim(), |(i, c)| {
        let src = i as i64 - delta;
        if (0..t).contains(&src) {
            s[[src as usize, c]]
        } else {
            0.0
        }
    })
}

/// Random gain followed by a random temporal shift.
pub fn jitter(s: &Array2<f64>, spec: &AugmentSpec, rng: &mut Rng) -> Array2<f64> {
    let g = uniform(rng, spec.voltage_jitter_range);
    let delta = uniform_shift(rng, spec.temporal_jitter_max);
    shift_edge_padded(&(s * g), delta)
}

/// Picks `k` of `c` channel positions: the peak channel 0 plus a contiguous
/// block of `k - 1` channels starting uniformly in `1..=c-k+1`.
pub fn crop_indices(c: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(k >= 1 && k <= c, "crop of {k} channels from {c}");
    if k == 1 {
        return vec![0];
    }
    let start = rng.random_range(1..=c - k + 1);
    std::iter::once(0).chain(start..start + k - 1).collect()
}

pub fn select_channels(s: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    s.select(Axis(1), idx)
}

/// Keeps `k` channels of `s` chosen by [`crop_indices`].
pub fn channel_crop(s: &Array2<f64>, k: usize, rng: &mut Rng) -> (Array2<f64>, Vec<usize>) {
    let idx = crop_indices(s.ncols(), k, rng);
    (select_channels(s, &idx), idx)
}

/// With probability `collision_prob`, adds a random donor restricted to the
/// channel positions `idx`, scaled and shifted with zero fill.
pub fn collide(s: &Array2<f64>, idx: &[usize], donors: &[Array2<f64>], spec: &AugmentSpec, rng: &mut Rng) -> Array2<f64> {
    assert!(!donors.is_empty(), "collision needs a donor pool");
    let hit = spec.collision_prob > 0.0 && rng.random::<f64>() < spec.collision_prob;
    if !hit {
        return s.clone();
    }
    let donor = &donors[rng.random_range(0..donors.len())];
    let u = uniform(rng, spec.collision_scale_range);
    let delta = uniform_shift(rng, spec.collision_offset_max);
    if u == 0.0 {
        return s.clone();
    }
    let d = shift_zero_padded(&select_channels(donor, idx), delta);
    s + &(d * u)
}

/// Stationary unit-variance AR(1) sequence.
pub fn ar1_noise(n: usize, a: f64, rng: &mut Rng) -> Vec<f64> {
    let innov = (1.0 - a * a).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x: f64 = StandardNormal.sample(rng);
    for _ in 0..n {
        out.push(x);
        let e: f64 = StandardNormal.sample(rng);
        x = a * x + innov * e;
    }
    out
}

/// Adds independent per-channel AR(1) noise with standard deviation
/// `u · MAD(s)`, `u` drawn from the configured range.
pub fn correlated_noise(s: &Array2<f64>, spec: &AugmentSpec, rng: &mut Rng) -> Array2<f64> {
    let u = uniform(rng, spec.noise_scale_range);
    if u == 0.0 {
        return s.clone();
    }
    let flat: Vec<f64> = s.iter().copied().collect();
    let sigma = u * stats::mad(&flat);
    if sigma == 0.0 {
        return s.clone();
    }
    let mut out = s.clone();
    for c in 0..s.ncols() {
        let n = ar1_noise(s.nrows(), spec.noise_ar_coeff, rng);
        for (v, e) in out.column_mut(c).iter_mut().zip(n) {
            *v += sigma * e;
        }
    }
    out
}

/// Two augmented views of one snippet plus the DAE target.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    /// Noised view used by both the contrastive and denoising branches.
    pub view1: Array2<f64>,
    pub view2: Array2<f64>,
    /// The un-augmented snippet on view 1's channels.
    pub clean: Array2<f64>,
    /// Channel positions (into the full snippet) kept by each view.
    pub channels1: Vec<usize>,
    pub channels2: Vec<usize>,
}

fn one_view(
    s: &Array2<f64>,
    donors: &[Array2<f64>],
    spec: &AugmentSpec,
    rng: &mut Rng,
) -> (Array2<f64>, Vec<usize>) {
    let j = jitter(s, spec, rng);
    let (cropped, idx) = channel_crop(&j, spec.crop_channels, rng);
    (collide(&cropped, &idx, donors, spec, rng), idx)
}

pub fn make_view_pair(s: &Array2<f64>, donors: &[Array2<f64>], spec: &AugmentSpec, rng: &mut Rng) -> ViewPair {
    let (v1, channels1) = one_view(s, donors, spec, rng);
    let view1 = correlated_noise(&v1, spec, rng);
    let (view2, channels2) = one_view(s, donors, spec, rng);
    let clean = select_channels(s, &channels1);
    ViewPair {
        view1,
        view2,
        clean,
        channels1,
        channels2,
    }
}

/// Scatters a cropped view back to `c` channels. Returns the padded array
/// and a 0/1 channel mask.
pub fn pad_view(v: &Array2<f64>, idx: &[usize], c: usize) -> (Array2<f64>, Vec<f64>) {
    let mut out = Array2::zeros((v.nrows(), c));
    let mut mask = vec![0.0; c];
    for (j, &ch) in idx.iter().enumerate() {
        out.column_mut(ch).assign(&v.column(j));
        mask[ch] = 1.0;
    }
    (out, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn snippet(t: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_fn((t, c), |_| StandardNormal.sample(&mut rng))
    }

    fn lag1(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        num / den
    }

    #[test]
    fn identity_jitter() {
        let s = snippet(121, 21, 1);
        let spec = AugmentSpec::identity(21);
        assert_eq!(jitter(&s, &spec, &mut rng_from(0)), s);
    }

    #[test]
    fn fixed_gain_doubles() {
        let s = snippet(121, 21, 2);
        let spec = AugmentSpec {
            voltage_jitter_range: (2.0, 2.0),
            ..AugmentSpec::identity(21)
        };
        assert_eq!(jitter(&s, &spec, &mut rng_from(0)), &s * 2.0);
    }

    #[test]
    fn shift_moves_trough() {
        let mut s = Array2::zeros((121, 3));
        s[[60, 0]] = -5.0;
        let out = shift_edge_padded(&s, 3);
        let trough = (0..121).min_by(|&a, &b| out[[a, 0]].total_cmp(&out[[b, 0]])).unwrap();
        assert_eq!(trough, 63);
        let back = shift_edge_padded(&s, -3);
        assert_eq!(back[[57, 0]], -5.0);
    }

    #[test]
    fn edge_padding_repeats_boundary() {
        let s = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
        let out = shift_edge_padded(&s, 2);
        assert_eq!(out.column(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn crop_rules() {
        let s = snippet(11, 21, 3);
        let (full, idx) = channel_crop(&s, 21, &mut rng_from(4));
        assert_eq!(full, s);
        assert_eq!(idx, (0..21).collect::<Vec<_>>());
        let (one, idx) = channel_crop(&s, 1, &mut rng_from(4));
        assert_eq!(idx, vec![0]);
        assert_eq!(one.column(0), s.column(0));
        let a = channel_crop(&s, 11, &mut rng_from(9));
        let b = channel_crop(&s, 11, &mut rng_from(9));
        assert_eq!(a, b);
    }

    #[test]
    fn crop_starts_cover_all_valid_positions() {
        let mut rng = rng_from(5);
        let mut seen = [false; 12];
        for _ in 0..2000 {
            let idx = crop_indices(21, 11, &mut rng);
            assert_eq!(idx[0], 0);
            assert_eq!(idx.len(), 11);
            seen[idx[1]] = true;
            assert!(idx.windows(2).skip(1).all(|w| w[1] == w[0] + 1));
        }
        assert!(seen[1..=11].iter().all(|&b| b));
    }

    #[test]
    fn collision_semantics() {
        let s = snippet(121, 5, 6);
        let all: Vec<usize> = (0..5).collect();
        let donors = vec![s.clone()];
        let off = AugmentSpec::identity(5);
        assert_eq!(collide(&s, &all, &donors, &off, &mut rng_from(0)), s);
        let full = AugmentSpec {
            collision_prob: 1.0,
            collision_scale_range: (1.0, 1.0),
            ..AugmentSpec::identity(5)
        };
        assert_eq!(collide(&s, &all, &donors, &full, &mut rng_from(0)), &s * 2.0);
        let zero = AugmentSpec {
            collision_prob: 1.0,
            collision_offset_max: 10,
            ..AugmentSpec::identity(5)
        };
        assert_eq!(collide(&s, &all, &donors, &zero, &mut rng_from(0)), s);
    }

    #[test]
    fn zero_noise_scale_is_identity() {
        let s = snippet(121, 5, 7);
        assert_eq!(correlated_noise(&s, &AugmentSpec::identity(5), &mut rng_from(0)), s);
    }

    fn added_noise(ar: f64) -> Vec<f64> {
        let s = snippet(10_000, 1, 8);
        let spec = AugmentSpec {
            noise_scale_range: (1.0, 1.0),
            noise_ar_coeff: ar,
            ..AugmentSpec::identity(1)
        };
        let out = correlated_noise(&s, &spec, &mut rng_from(11));
        (&out - &s).column(0).to_vec()
    }

    #[test]
    fn white_noise_has_no_lag1_correlation() {
        assert!(lag1(&added_noise(0.0)).abs() < 0.05);
    }

    #[test]
    fn ar_noise_has_configured_lag1_correlation() {
        let r = lag1(&added_noise(0.9));
        assert!((0.85..=0.95).contains(&r), "rho1 = {r}");
    }

    #[test]
    fn noise_amplitude_tracks_mad() {
        let n = added_noise(0.0);
        let s = snippet(10_000, 1, 8);
        let want = stats::mad(s.as_slice().unwrap());
        let got = stats::std_dev(&n);
        assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
    }

    #[test]
    fn identity_spec_views_equal_input() {
        let s = snippet(121, 21, 9);
        let vp = make_view_pair(&s, &[s.clone()], &AugmentSpec::identity(21), &mut rng_from(1));
        assert_eq!(vp.view1, s);
        assert_eq!(vp.view2, s);
        assert_eq!(vp.clean, s);
    }

    #[test]
    fn noise_only_spec_touches_view1_only() {
        let s = snippet(121, 21, 10);
        let spec = AugmentSpec {
            noise_scale_range: (1.0, 1.0),
            noise_ar_coeff: 0.9,
            ..AugmentSpec::identity(21)
        };
        let vp = make_view_pair(&s, &[s.clone()], &spec, &mut rng_from(2));
        assert_eq!(vp.view2, s);
        assert_eq!(vp.clean, s);
        assert_ne!(vp.view1, s);
    }

    #[test]
    fn view_pairs_are_deterministic() {
        let s = snippet(121, 21, 12);
        let donors = vec![snippet(121, 21, 13), snippet(121, 21, 14)];
        let spec = AugmentSpec::default();
        let a = make_view_pair(&s, &donors, &spec, &mut rng_from(3));
        let b = make_view_pair(&s, &donors, &spec, &mut rng_from(3));
        assert_eq!(a, b);
        assert_eq!(a.view1.dim(), (121, 11));
        assert_eq!(a.clean, select_channels(&s, &a.channels1));
        assert!(a.view1.iter().chain(a.view2.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn mean_gain_matches_range_midpoint() {
        let spec = AugmentSpec {
            temporal_jitter_max: 0,
            ..AugmentSpec::default()
        };
        let ones = Array2::ones((3, 1));
        let mut rng = rng_from(15);
        let n = 10_000;
        let mean = (0..n).map(|_| jitter(&ones, &spec, &mut rng)[[0, 0]]).sum::<f64>() / n as f64;
        assert!((mean / 1.0 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn padding_restores_positions() {
        let s = snippet(7, 9, 16);
        let idx = vec![0, 3, 4, 5];
        let (p, mask) = pad_view(&select_channels(&s, &idx), &idx, 9);
        assert_eq!(p.column(3), s.column(3));
        assert!(p.column(1).iter().all(|&v| v == 0.0));
        assert_eq!(mask, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn default_spec_is_valid() {
        AugmentSpec::default().validate_for(121, 21).unwrap();
        assert!(AugmentSpec {
            crop_channels: 10,
            ..AugmentSpec::default()
        }
        .validate()
        .is_err());
        assert!(AugmentSpec::default().validate_for(121, 9).is_err());
    }
}
