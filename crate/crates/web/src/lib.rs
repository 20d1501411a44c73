//! Browser demo bindings: probe drift, a synthetic trace with threshold
//! detections, and GMM clustering of 2-D points.

use ndarray::Array2;
use spikerep::cluster::{gmm_assign, gmm_fit, GmmOptions};
use spikerep::config::PipelineConfig;
use spikerep::dsp::{bandpass_in_place, detect};
use spikerep::synth::{drift_displacement, generate_recording, DriftModel};
use wasm_bindgen::prelude::*;

fn js_err(e: spikerep::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Drift displacement (µm) sampled at `n_points` evenly spaced times.
#[wasm_bindgen]
pub fn drift_curve(amplitude_um: f64, n_cycles: f64, duration_s: f64, n_points: usize) -> Result<Vec<f64>, JsValue> {
    let d = DriftModel {
        amplitude_um,
        n_cycles,
        duration_s,
    };
    let n = n_points.max(2);
    (0..n)
        .map(|i| drift_displacement(&d, duration_s * i as f64 / (n - 1) as f64).map_err(js_err))
        .collect()
}

/// One channel of a short synthetic recording plus detections on it.
#[wasm_bindgen]
pub struct TraceDemo {
    trace: Vec<f64>,
    detected: Vec<u32>,
    truth: Vec<u32>,
    channel: usize,
    sample_rate_hz: f64,
}

#[wasm_bindgen]
impl TraceDemo {
    /// Filtered voltage of the displayed channel.
    pub fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    /// Frames of detections whose peak channel is the displayed one.
    pub fn detected(&self) -> Vec<u32> {
        self.detected.clone()
    }

    /// Ground-truth spike frames of the unit peaking on the displayed channel.
    pub fn truth(&self) -> Vec<u32> {
        self.truth.clone()
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
}

/// Generates two seconds of a 4-unit recording, band-passes it and runs
/// threshold detection at `threshold_mads`.
#[wasm_bindgen]
pub fn simulate_detection(seed: u32, noise_std_uv: f64, threshold_mads: f64) -> Result<TraceDemo, JsValue> {
    let cfg = PipelineConfig {
        synth_n_units: 4,
        synth_rows: 8,
        synth_cols: 2,
        synth_duration_s: 2.0,
        synth_firing_rate_hz: 8.0,
        synth_noise_std_uv: noise_std_uv,
        detect_threshold_mads: threshold_mads,
        ..PipelineConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let (mut rec, gt) = generate_recording(&cfg.synth_spec(seed as u64)).map_err(js_err)?;
    bandpass_in_place(&mut rec, &cfg.filter_spec()).map_err(js_err)?;
    let frames = gt.units.get(&0).cloned().unwrap_or_default();
    let channel = spikerep::synth::unit_peak_channel(&rec, &frames);
    let events = detect(&rec, &cfg.detection_spec(rec.sample_rate_hz));
    Ok(TraceDemo {
        trace: rec.channel(channel),
        detected: events
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.frame as u32)
            .collect(),
        truth: frames.iter().map(|&f| f as u32).collect(),
        channel,
        sample_rate_hz: rec.sample_rate_hz,
    })
}

/// Clusters interleaved `[x0, y0, x1, y1, ...]` points into `k` components.
#[wasm_bindgen]
pub fn cluster_points(xy: &[f64], k: usize, seed: u32) -> Result<Vec<u32>, JsValue> {
    if xy.len() % 2 != 0 {
        return Err(JsValue::from_str("coordinates must come in pairs"));
    }
    let x = Array2::from_shape_vec((xy.len() / 2, 2), xy.to_vec()).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let opts = GmmOptions {
        seed: seed as u64,
        n_init: 3,
        ..GmmOptions::default()
    };
    let model = gmm_fit(&x, k, &opts).map_err(js_err)?;
    Ok(gmm_assign(&model, &x).map_err(js_err)?.into_iter().map(|l| l as u32).collect())
}
