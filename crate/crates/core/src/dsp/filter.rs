//! Butterworth band-pass design (bilinear transform with pre-warping,
//! second-order sections) and zero-phase forward-backward filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::data::Recording;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_hz: 300.0,
            high_hz: 6000.0,
            order: 3,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < sample_rate_hz / 2.0) {
            return Err(Error::Invalid(format!(
                "band {}..{} Hz invalid for sample rate {sample_rate_hz} Hz",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 || self.order > 12 {
            return Err(Error::Invalid(format!("filter order {} outside 1..=12", self.order)));
        }
        Ok(())
    }
}

/// One biquad, `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    sections: Vec<Section>,
}

impl BandpassFilter {
    pub fn butterworth(spec: &FilterSpec, sample_rate_hz: f64) -> Result<Self> {
        spec.validate(sample_rate_hz)?;
        let n = spec.order;
        let fs2 = 2.0 * sample_rate_hz;
        let warp = |f: f64| fs2 * (PI * f / sample_rate_hz).tan();
        let (wl, wh) = (warp(spec.low_hz), warp(spec.high_hz));
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();

        // analog low-pass prototype poles, shifted to band-pass
        let mut analog_poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (p * p - w0 * w0).sqrt();
            analog_poles.push(p + disc);
            analog_poles.push(p - disc);
        }
        // n zeros at s = 0 and gain bw^n; bilinear maps them to z = 1,
        // and the n zeros at infinity to z = -1
        let mut gain = Complex64::new(bw.powi(n as i32), 0.0);
        gain *= Complex64::new(fs2.powi(n as i32), 0.0);
        for p in &analog_poles {
            gain /= fs2 - p;
        }
        let poles: Vec<Complex64> = analog_poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();

        let mut sections = pair_poles(&poles)
            .into_iter()
            .map(|(a1, a2)| Section {
                b: [1.0, 0.0, -1.0],
                a: [1.0, a1, a2],
            })
            .collect::<Vec<_>>();
        for v in sections[0].b.iter_mut() {
            *v *= gain.re;
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Complex response of a single forward pass at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = s.dc_gain() * scale;
                let zi = [y - s.b[0] * scale, s.b[2] * scale - s.a[2] * y];
                scale = y;
                zi
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], x0: f64) {
        let zi = self.steady_state();
        for (s, z) in self.sections.iter().zip(zi) {
            let (mut z0, mut z1) = (z[0] * x0, z[1] * x0);
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z0;
                z0 = b1 * xin - a1 * y + z1;
                z1 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase filtering: odd extension at both ends, steady-state initial
    /// conditions, a forward pass and a time-reversed pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return vec![0.0; n];
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Groups 2N poles into N real biquad denominators `(a1, a2)`: complex poles
/// with their conjugates, remaining real poles pairwise in sorted order.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    let tol = 1e-10;
    let mut complex: Vec<Complex64> = poles
        .iter()
        .copied()
        .filter(|p| p.im > tol * p.norm().max(1.0))
        .collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= tol * p.norm().max(1.0))
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<(f64, f64)> = complex.iter().map(|p| (-2.0 * p.re, p.norm_sqr())).collect();
    for pair in real.chunks(2) {
        match pair {
            [p, q] => out.push((-(p + q), p * q)),
            [p] => out.push((-p, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

/// Zero-phase Butterworth band-pass of every channel.
pub fn bandpass(rec: &Recording, f: &FilterSpec) -> Result<Recording> {
    let mut out = rec.clone();
    bandpass_in_place(&mut out, f)?;
    Ok(out)
}

pub fn bandpass_in_place(rec: &mut Recording, f: &FilterSpec) -> Result<()> {
    let filter = BandpassFilter::butterworth(f, rec.sample_rate_hz)?;
    super::map_channels(rec, |x| filter.filtfilt(x));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ProbeGeometry;

    /// Closed-form magnitude of the analog Butterworth band-pass evaluated at
    /// the pre-warped frequency; independent of the pole/section code.
    fn butterworth_magnitude(spec: &FilterSpec, fs: f64, f: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh, w) = (warp(spec.low_hz), warp(spec.high_hz), warp(f));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * spec.order as i32)).sqrt()
    }

    fn sine(f: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    /// Least-squares amplitude and phase of a known-frequency sinusoid over a window.
    fn fit_sine(y: &[f64], f: f64, fs: f64, range: std::ops::Range<usize>) -> (f64, f64) {
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in range {
            let ph = 2.0 * PI * f * i as f64 / fs;
            let (s, c) = ph.sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y[i] * s;
            yc += y[i] * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        ((a * a + b * b).sqrt(), b.atan2(a))
    }

    #[test]
    fn design_matches_closed_form_magnitude() {
        let spec = FilterSpec::default();
        let fs = 30_000.0;
        let filt = BandpassFilter::butterworth(&spec, fs).unwrap();
        assert_eq!(filt.sections().len(), 3);
        for f in [50.0, 300.0, 1000.0, 1341.6, 4000.0, 6000.0, 10_000.0, 14_000.0] {
            let got = filt.response(f, fs).norm();
            let want = butterworth_magnitude(&spec, fs, f);
            assert!((got - want).abs() < 1e-9, "f={f}: {got} vs {want}");
        }
    }

    #[test]
    fn dc_input_is_removed() {
        let filt = BandpassFilter::butterworth(&FilterSpec::default(), 30_000.0).unwrap();
        let y = filt.filtfilt(&vec![50.0; 30_000]);
        let worst = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3, "max |out| = {worst}");
    }

    #[test]
    fn centre_frequency_passes_with_zero_phase() {
        let spec = FilterSpec::default();
        let fs = 30_000.0;
        let fc = (spec.low_hz * spec.high_hz).sqrt();
        let filt = BandpassFilter::butterworth(&spec, fs).unwrap();
        let x = sine(fc, fs, 60_000, 10.0);
        let y = filt.filtfilt(&x);
        let (amp, phase) = fit_sine(&y, fc, fs, 10_000..50_000);
        let expected = 10.0 * butterworth_magnitude(&spec, fs, fc).powi(2);
        assert!((amp - 10.0).abs() < 0.5, "amp {amp}");
        assert!((amp - expected).abs() < 1e-3 * expected);
        assert!(phase.abs() < 1e-3, "phase {phase}");
    }

    #[test]
    fn stopband_attenuation() {
        // band chosen so that 10 × high_hz is below Nyquist
        let spec = FilterSpec {
            low_hz: 30.0,
            high_hz: 300.0,
            order: 3,
        };
        let fs = 30_000.0;
        let filt = BandpassFilter::butterworth(&spec, fs).unwrap();
        let f = 3000.0;
        let x = sine(f, fs, 30_000, 1.0);
        let y = filt.filtfilt(&x);
        let (amp, _) = fit_sine(&y, f, fs, 5_000..25_000);
        let db = 20.0 * amp.log10();
        assert!(db <= -20.0, "{db} dB");
        let expected = butterworth_magnitude(&spec, fs, f).powi(2);
        assert!((amp - expected).abs() < 1e-3);
    }

    #[test]
    fn invalid_band_rejected() {
        let bad = FilterSpec {
            low_hz: 6000.0,
            high_hz: 300.0,
            order: 3,
        };
        assert!(BandpassFilter::butterworth(&bad, 30_000.0).is_err());
        let above_nyquist = FilterSpec {
            high_hz: 16_000.0,
            ..FilterSpec::default()
        };
        assert!(BandpassFilter::butterworth(&above_nyquist, 30_000.0).is_err());
    }

    #[test]
    fn recording_shape_preserved() {
        let g = ProbeGeometry::grid(3, 1, 20.0).unwrap();
        let rec = Recording::new(30_000.0, 500, (0..1500).map(|i| (i % 7) as f32).collect(), g).unwrap();
        let out = bandpass(&rec, &FilterSpec::default()).unwrap();
        assert_eq!(out.n_frames, rec.n_frames);
        assert_eq!(out.n_channels, rec.n_channels);
    }

    proptest::proptest! {
        #[test]
        fn filtering_is_linear(
            seed in proptest::prelude::any::<u64>(),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from(seed);
            let n = 2000;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let filt = BandpassFilter::butterworth(&FilterSpec::default(), 30_000.0).unwrap();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = filt.filtfilt(&combo);
            let (fx, fy) = (filt.filtfilt(&x), filt.filtfilt(&y));
            let scale = lhs.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                let rhs = a * fx[i] + b * fy[i];
                proptest::prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * scale);
            }
        }
    }
}
