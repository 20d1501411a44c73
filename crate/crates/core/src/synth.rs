//! Synthetic ground-truth recordings.
//!
//! Units are biphasic difference-of-Gaussians waveforms with a spatial
//! footprint that decays as `1 / (1 + (d/λ)²)` with distance from the
//! source. Spike trains are Poisson with a 2 ms dead time, sources drift
//! vertically along a sinusoid, and background noise is AR(1) in time and
//! mixed across channels with the same spatial kernel.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::data::{GroundTruth, ProbeGeometry, Recording};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::stats;

/// Absolute refractory period enforced on every synthetic spike train.
pub const REFRACTORY_S: f64 = 0.002;
/// Reported SNR when the noise estimate is exactly zero.
pub const SNR_CAP: f64 = 1e9;
/// Window (samples) used to average waveforms for SNR.
pub const SNR_WINDOW: usize = 121;

/// Sinusoidal vertical probe drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    pub amplitude_um: f64,
    pub n_cycles: f64,
    pub duration_s: f64,
}

impl DriftModel {
    pub fn none(duration_s: f64) -> Self {
        Self {
            amplitude_um: 0.0,
            n_cycles: 0.0,
            duration_s,
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amplitude_um * (2.0 * PI * self.n_cycles * t / self.duration_s).sin()
    }
}

/// Displacement in µm at time `t` seconds, `0 ≤ t ≤ duration_s`.
pub fn drift_displacement(d: &DriftModel, t: f64) -> Result<f64> {
    if !(0.0..=d.duration_s).contains(&t) {
        return Err(Error::Invalid(format!("t = {t} s outside [0, {}]", d.duration_s)));
    }
    Ok(d.at(t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_units: usize,
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub firing_rate_hz: f64,
    pub amplitude_range_uv: (f64, f64),
    pub noise_std_uv: f64,
    pub noise_ar: f64,
    pub decay_um: f64,
    /// Template length in samples (odd); the trough sits at the centre sample.
    pub template_samples: usize,
    pub drift: DriftModel,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_units: 8,
            rows: 16,
            cols: 4,
            pitch_um: 20.0,
            duration_s: 120.0,
            sample_rate_hz: 30_000.0,
            firing_rate_hz: 4.0,
            amplitude_range_uv: (60.0, 200.0),
            noise_std_uv: 10.0,
            noise_ar: 0.9,
            decay_um: 25.0,
            template_samples: 121,
            drift: DriftModel::none(120.0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pitch_um", self.pitch_um),
            ("duration_s", self.duration_s),
            ("sample_rate_hz", self.sample_rate_hz),
            ("firing_rate_hz", self.firing_rate_hz),
            ("decay_um", self.decay_um),
            ("drift.duration_s", self.drift.duration_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Invalid("probe needs at least one row and column".into()));
        }
        let (lo, hi) = self.amplitude_range_uv;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::Invalid(format!("amplitude range ({lo}, {hi}) not ordered")));
        }
        if !(self.noise_std_uv >= 0.0) {
            return Err(Error::Invalid("noise_std_uv must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.noise_ar) {
            return Err(Error::Invalid(format!("AR coefficient {} outside [0, 1)", self.noise_ar)));
        }
        if self.template_samples < 3 || self.template_samples % 2 == 0 {
            return Err(Error::Invalid("template_samples must be odd and at least 3".into()));
        }
        if !(self.drift.amplitude_um >= 0.0 && self.drift.n_cycles >= 0.0) {
            return Err(Error::Invalid("drift amplitude and cycles must be nonnegative".into()));
        }
        if 1.0 / self.firing_rate_hz <= REFRACTORY_S {
            return Err(Error::Invalid("firing rate incompatible with 2 ms refractory period".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<ProbeGeometry> {
        ProbeGeometry::grid(self.rows, self.cols, self.pitch_um)
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

fn spatial_kernel(d: f64, decay_um: f64) -> f64 {
    1.0 / (1.0 + (d / decay_um).powi(2))
}

/// A unit's spatiotemporal footprint. The full waveform is rank one:
/// `amplitude · footprint[c] · shape[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTemplate {
    /// T×C waveform at the base (undrifted) source position, µV.
    pub waveform: Array2<f64>,
    pub source_position: [f64; 2],
    /// Peak-to-peak amplitude on the peak channel, µV.
    pub amplitude: f64,
    /// Temporal shape with unit peak-to-peak and its trough at the centre sample.
    pub shape: Vec<f64>,
    pub decay_um: f64,
    norm: f64,
}

impl UnitTemplate {
    pub fn new(
        geometry: &ProbeGeometry,
        source_position: [f64; 2],
        amplitude: f64,
        shape: Vec<f64>,
        decay_um: f64,
    ) -> Self {
        let raw: Vec<f64> = (0..geometry.n_channels())
            .map(|c| spatial_kernel(geometry.distance_to(c, source_position), decay_um))
            .collect();
        let norm = raw.iter().copied().fold(0.0, f64::max);
        let mut t = Self {
            waveform: Array2::zeros((shape.len(), geometry.n_channels())),
            source_position,
            amplitude,
            shape,
            decay_um,
            norm,
        };
        t.waveform = t.waveform_at(geometry, source_position);
        t
    }

    /// Per-channel gain for a source at `position`, relative to the base peak channel.
    pub fn footprint_at(&self, geometry: &ProbeGeometry, position: [f64; 2]) -> Vec<f64> {
        (0..geometry.n_channels())
            .map(|c| spatial_kernel(geometry.distance_to(c, position), self.decay_um) / self.norm)
            .collect()
    }

    pub fn waveform_at(&self, geometry: &ProbeGeometry, position: [f64; 2]) -> Array2<f64> {
        let fp = self.footprint_at(geometry, position);
        Array2::from_shape_fn((self.shape.len(), fp.len()), |(t, c)| {
            self.amplitude * fp[c] * self.shape[t]
        })
    }

    pub fn peak_channel(&self) -> usize {
        argmax(self.waveform.map_axis(Axis(0), |col| ptp(col.iter().copied())).iter().copied())
    }
}

fn ptp(xs: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in xs.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Difference-of-Gaussians parameters, in samples.
#[derive(Debug, Clone, Copy)]
pub struct SpikeShape {
    pub trough_width: f64,
    pub rebound_delay: f64,
    pub rebound_width: f64,
    pub rebound_ratio: f64,
}

impl SpikeShape {
    fn eval(&self, t: f64) -> f64 {
        -(-t * t / (2.0 * self.trough_width.powi(2))).exp()
            + self.rebound_ratio
                * (-(t - self.rebound_delay).powi(2) / (2.0 * self.rebound_width.powi(2))).exp()
    }

    fn trough_time(&self) -> f64 {
        // golden-section search; the trough lies within ±2 widths of zero
        let (mut a, mut b) = (-2.0 * self.trough_width, 2.0 * self.trough_width);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.eval(c) < self.eval(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    /// Samples the waveform on `n` points (odd) with the continuous trough
    /// exactly on the centre sample, tapers the ends and scales to unit ptp.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        let centre = (n / 2) as f64;
        let t0 = self.trough_time();
        let taper_len = (n / 8).max(1) as f64;
        let mut w: Vec<f64> = (0..n)
            .map(|i| {
                let edge = (i as f64 + 0.5).min(n as f64 - i as f64 - 0.5);
                let taper = if edge < taper_len {
                    (0.5 * PI * edge / taper_len).sin().powi(2)
                } else {
                    1.0
                };
                self.eval(i as f64 - centre + t0) * taper
            })
            .collect();
        let span = ptp(w.iter().copied());
        for v in w.iter_mut() {
            *v /= span;
        }
        w
    }
}

/// Draws one template per unit. Units are spread over the probe height in
/// equal bands (one unit per band), at a uniform column offset.
pub fn make_templates(spec: &SynthSpec, rng: &mut Rng) -> Result<Vec<UnitTemplate>> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let ms = spec.sample_rate_hz / 1000.0;
    let width = (spec.cols - 1) as f64 * spec.pitch_um;
    let height = (spec.rows - 1) as f64 * spec.pitch_um;
    let (lo, hi) = spec.amplitude_range_uv;
    let mut out = Vec::with_capacity(spec.n_units);
    for u in 0..spec.n_units {
        let band = height / spec.n_units.max(1) as f64;
        let x = rng.random_range(0.0..=width);
        let y = band * (u as f64 + rng.random_range(0.0..=1.0));
        let amplitude = rng.random_range(lo..=hi);
        let shape = SpikeShape {
            trough_width: rng.random_range(0.10..0.20) * ms,
            rebound_delay: rng.random_range(0.30..0.50) * ms,
            rebound_width: rng.random_range(0.25..0.45) * ms,
            rebound_ratio: rng.random_range(0.25..0.60),
        };
        out.push(UnitTemplate::new(
            &geometry,
            [x, y],
            amplitude,
            shape.sample(spec.template_samples),
            spec.decay_um,
        ));
    }
    Ok(out)
}

fn spike_train(spec: &SynthSpec, rng: &mut Rng) -> Vec<usize> {
    let n_frames = spec.n_frames();
    let half = spec.template_samples / 2;
    // dead-time Poisson: ISI = refractory + Exp(rate') with mean ISI = 1 / rate
    let rate = 1.0 / (1.0 / spec.firing_rate_hz - REFRACTORY_S);
    let exp = Exp::new(rate).expect("positive rate");
    let mut frames = Vec::new();
    let mut t = 0.0;
    loop {
        t += REFRACTORY_S + exp.sample(rng);
        let frame = (t * spec.sample_rate_hz).floor() as usize;
        if frame + half >= n_frames {
            break;
        }
        if frame >= half {
            frames.push(frame);
        }
    }
    frames
}

/// Generates a recording and its ground truth from `spec`.
pub fn generate_recording(spec: &SynthSpec) -> Result<(Recording, GroundTruth)> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let n_frames = spec.n_frames();
    if n_frames < spec.template_samples {
        return Err(Error::Invalid(format!(
            "duration {} s too short for one {}-sample snippet",
            spec.duration_s, spec.template_samples
        )));
    }
    let nc = geometry.n_channels();
    let half = spec.template_samples / 2;

    let templates = make_templates(spec, &mut rng::substream(spec.seed, &[0]))?;
    let mut samples = vec![0f32; n_frames * nc];
    let mut units = BTreeMap::new();
    let mut template_map = BTreeMap::new();

    for (u, tmpl) in templates.iter().enumerate() {
        let frames = spike_train(spec, &mut rng::substream(spec.seed, &[1, u as u64]));
        for &frame in &frames {
            let t = frame as f64 / spec.sample_rate_hz;
            let dy = drift_displacement(&spec.drift, t)?;
            let pos = [tmpl.source_position[0], tmpl.source_position[1] + dy];
            let fp = tmpl.footprint_at(&geometry, pos);
            let start = frame - half;
            for (i, &s) in tmpl.shape.iter().enumerate() {
                let row = &mut samples[(start + i) * nc..(start + i + 1) * nc];
                for (c, v) in row.iter_mut().enumerate() {
                    *v += (tmpl.amplitude * fp[c] * s) as f32;
                }
            }
        }
        units.insert(u as u32, frames);
        template_map.insert(u as u32, tmpl.waveform.clone());
    }

    if spec.noise_std_uv > 0.0 {
        add_correlated_noise(spec, &geometry, &mut samples, n_frames);
    }

    let rec = Recording::new(spec.sample_rate_hz, n_frames, samples, geometry)?;
    let mut gt = GroundTruth::from_units(units)?;
    gt.templates = template_map;
    Ok((rec, gt))
}

fn add_correlated_noise(spec: &SynthSpec, geometry: &ProbeGeometry, samples: &mut [f32], n_frames: usize) {
    let nc = geometry.n_channels();
    // rows normalised so each mixed channel keeps unit variance
    let mut mix = Array2::from_shape_fn((nc, nc), |(i, j)| {
        spatial_kernel(geometry.distance(i, j), spec.decay_um)
    });
    for mut row in mix.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    let mix_t = mix.t().to_owned() * spec.noise_std_uv;

    let mut rng = rng::substream(spec.seed, &[2]);
    let a = spec.noise_ar;
    let innov = (1.0 - a * a).sqrt();
    let mut state: Vec<f64> = (0..nc).map(|_| StandardNormal.sample(&mut rng)).collect();
    const CHUNK: usize = 8192;
    let mut start = 0;
    while start < n_frames {
        let len = CHUNK.min(n_frames - start);
        let mut z = Array2::<f64>::zeros((len, nc));
        for mut row in z.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut rng);
                state[c] = a * state[c] + innov * e;
                *v = state[c];
            }
        }
        let mixed = z.dot(&mix_t);
        for (f, row) in mixed.rows().into_iter().enumerate() {
            let dst = &mut samples[(start + f) * nc..(start + f + 1) * nc];
            for (d, &v) in dst.iter_mut().zip(row.iter()) {
                *d += v as f32;
            }
        }
        start += len;
    }
}

/// Mean waveform (T×C) over the spikes at `frames` whose window fits in the recording.
pub fn mean_waveform(rec: &Recording, frames: &[usize], window: usize) -> Array2<f64> {
    let half = window / 2;
    let nc = rec.n_channels;
    let mut acc = Array2::<f64>::zeros((window, nc));
    let mut n = 0usize;
    for &f in frames {
        if f < half || f + half >= rec.n_frames {
            continue;
        }
        for i in 0..window {
            let row = &rec.samples[(f - half + i) * nc..(f - half + i + 1) * nc];
            for (c, &v) in row.iter().enumerate() {
                acc[[i, c]] += v as f64;
            }
        }
        n += 1;
    }
    if n > 0 {
        acc /= n as f64;
    }
    acc
}

/// Channel with the largest peak-to-peak amplitude of the unit's mean waveform.
pub fn unit_peak_channel(rec: &Recording, frames: &[usize]) -> usize {
    let mean = mean_waveform(rec, frames, SNR_WINDOW.min(rec.n_frames | 1));
    argmax(mean.map_axis(Axis(0), |col| ptp(col.iter().copied())).iter().copied())
}

/// Peak-to-peak of the unit's mean waveform on its peak channel divided by
/// the robust (1.4826·MAD) noise level of that channel with every
/// ground-truth spike window removed. Zero noise reports [`SNR_CAP`].
pub fn snr_of_unit(rec: &Recording, gt: &GroundTruth, unit_id: u32) -> Result<f64> {
    let frames = gt
        .units
        .get(&unit_id)
        .ok_or_else(|| Error::Invalid(format!("unknown unit {unit_id}")))?;
    if frames.len() < 10 {
        return Err(Error::Invalid(format!(
            "unit {unit_id} has {} spikes; SNR needs at least 10",
            frames.len()
        )));
    }
    let window = SNR_WINDOW;
    let half = window / 2;
    let mean = mean_waveform(rec, frames, window);
    let ptps = mean.map_axis(Axis(0), |col| ptp(col.iter().copied()));
    let peak = argmax(ptps.iter().copied());
    let signal = ptps[peak];

    let mut keep = vec![true; rec.n_frames];
    for (f, _) in gt.events() {
        let lo = f.saturating_sub(half);
        let hi = (f + half + 1).min(rec.n_frames);
        keep[lo..hi].iter_mut().for_each(|k| *k = false);
    }
    let trace: Vec<f64> = rec
        .channel(peak)
        .into_iter()
        .zip(&keep)
        .filter_map(|(v, &k)| k.then_some(v))
        .collect();
    let sigma = stats::robust_sigma(&trace);
    if sigma <= 0.0 {
        return Ok(SNR_CAP);
    }
    Ok((signal / sigma).min(SNR_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            n_units: 3,
            rows: 8,
            cols: 2,
            duration_s: 2.0,
            firing_rate_hz: 10.0,
            drift: DriftModel::none(2.0),
            ..SynthSpec::default()
        }
    }

    #[test]
    fn drift_examples() {
        let d = DriftModel {
            amplitude_um: 20.0,
            n_cycles: 2.0,
            duration_s: 1200.0,
        };
        assert!((drift_displacement(&d, 150.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(drift_displacement(&d, 300.0).unwrap().abs() < 1e-9);
        let flat = DriftModel { amplitude_um: 0.0, ..d };
        assert_eq!(drift_displacement(&flat, 777.0).unwrap(), 0.0);
        assert!(drift_displacement(&d, 1200.5).is_err());
        assert!(drift_displacement(&d, -1.0).is_err());
    }

    #[test]
    fn template_at_channel_peaks_there() {
        let g = ProbeGeometry::grid(16, 4, 20.0).unwrap();
        let shape = SpikeShape {
            trough_width: 4.0,
            rebound_delay: 12.0,
            rebound_width: 10.0,
            rebound_ratio: 0.4,
        }
        .sample(121);
        for k in [0, 17, 42, 63] {
            let t = UnitTemplate::new(&g, g.channel_positions[k], 120.0, shape.clone(), 25.0);
            assert_eq!(t.peak_channel(), k);
        }
    }

    #[test]
    fn footprint_decays_with_distance() {
        let spec = SynthSpec::default();
        let g = spec.geometry().unwrap();
        for t in make_templates(&spec, &mut rng::rng_from(3)).unwrap() {
            let mut by_dist: Vec<(f64, f64)> = (0..g.n_channels())
                .map(|c| {
                    let col = t.waveform.column(c);
                    (g.distance_to(c, t.source_position), ptp(col.iter().copied()))
                })
                .collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in by_dist.windows(2) {
                assert!(w[1].1 <= w[0].1 * 1.05);
            }
        }
    }

    #[test]
    fn degenerate_amplitude_range() {
        let spec = SynthSpec {
            amplitude_range_uv: (100.0, 100.0),
            ..SynthSpec::default()
        };
        for t in make_templates(&spec, &mut rng::rng_from(1)).unwrap() {
            let col = t.waveform.column(t.peak_channel());
            let p = ptp(col.iter().copied());
            assert!((p - 100.0).abs() <= 1.0, "ptp {p}");
        }
    }

    #[test]
    fn trough_is_centred() {
        let spec = SynthSpec::default();
        for t in make_templates(&spec, &mut rng::rng_from(9)).unwrap() {
            let centre = t.shape.len() / 2;
            let argmin = t
                .shape
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmin, centre);
        }
    }

    #[test]
    fn same_seed_same_templates() {
        let spec = SynthSpec::default();
        let a = make_templates(&spec, &mut rng::rng_from(5)).unwrap();
        let b = make_templates(&spec, &mut rng::rng_from(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refractory_and_bounds_hold() {
        let spec = SynthSpec {
            firing_rate_hz: 200.0,
            ..small_spec()
        };
        let (rec, gt) = generate_recording(&spec).unwrap();
        gt.validate(rec.n_frames).unwrap();
        let min_gap = (REFRACTORY_S * spec.sample_rate_hz).round() as usize;
        for frames in gt.units.values() {
            assert!(frames.windows(2).all(|w| w[1] - w[0] >= min_gap));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let (r1, g1) = generate_recording(&spec).unwrap();
        let (r2, g2) = generate_recording(&spec).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn zero_noise_snr_is_capped() {
        let spec = SynthSpec {
            noise_std_uv: 0.0,
            ..small_spec()
        };
        let (rec, gt) = generate_recording(&spec).unwrap();
        for &u in gt.units.keys() {
            if gt.units[&u].len() >= 10 {
                assert_eq!(snr_of_unit(&rec, &gt, u).unwrap(), SNR_CAP);
            }
        }
    }

    #[test]
    fn too_few_spikes_for_snr() {
        let spec = SynthSpec {
            n_units: 1,
            firing_rate_hz: 0.5,
            ..small_spec()
        };
        let (rec, gt) = generate_recording(&spec).unwrap();
        assert!(snr_of_unit(&rec, &gt, 0).is_err());
    }

    #[test]
    fn too_short_duration_rejected() {
        let spec = SynthSpec {
            duration_s: 0.001,
            drift: DriftModel::none(0.001),
            ..small_spec()
        };
        assert!(generate_recording(&spec).is_err());
    }
}
