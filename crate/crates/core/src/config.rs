//! Flat key/value pipeline configuration.
//!
//! Every tunable of every stage lives here with its default. An empty JSON
//! object parses to the defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::cluster::GmmOptions;
use crate::dsp::{DetectionSpec, FilterSpec, Polarity};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::synth::{DriftModel, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMethod {
    /// Learned representations from a trained checkpoint.
    Model,
    /// PCA of the flattened raw snippets (baseline; no checkpoint needed).
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// Fixed component count `gmm_components`.
    Gmm,
    /// Component count chosen by BIC over `1..=gmm_k_max`.
    GmmBic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // synthetic recordings
    pub synth_n_units: usize,
    pub synth_rows: usize,
    pub synth_cols: usize,
    pub synth_pitch_um: f64,
    pub synth_duration_s: f64,
    pub synth_sample_rate_hz: f64,
    pub synth_firing_rate_hz: f64,
    pub synth_amp_min_uv: f64,
    pub synth_amp_max_uv: f64,
    pub synth_noise_std_uv: f64,
    pub synth_noise_ar: f64,
    pub synth_decay_um: f64,
    pub synth_drift_amplitude_um: f64,
    pub synth_drift_cycles: f64,

    // preprocessing
    pub remove_bad_channels: bool,
    pub bad_channel_factor: f64,
    pub bandpass_enabled: bool,
    pub filter_low_hz: f64,
    pub filter_high_hz: f64,
    pub filter_order: usize,

    // detection and extraction
    pub detect_threshold_mads: f64,
    pub detect_polarity: Polarity,
    pub detect_refractory_ms: f64,
    pub detect_peak_window_ms: f64,
    pub detect_merge_radius_um: f64,
    pub snippet_t: usize,
    pub snippet_c: usize,

    // augmentation
    pub aug_voltage_jitter_lo: f64,
    pub aug_voltage_jitter_hi: f64,
    pub aug_temporal_jitter_max: usize,
    pub aug_crop_channels: usize,
    pub aug_collision_prob: f64,
    pub aug_collision_scale_lo: f64,
    pub aug_collision_scale_hi: f64,
    pub aug_collision_offset_max: usize,
    pub aug_noise_scale_lo: f64,
    pub aug_noise_scale_hi: f64,
    pub aug_noise_ar: f64,

    // model
    pub model_conv_kernel: usize,
    pub model_embed_dim: usize,
    pub model_layers: usize,
    pub model_heads: usize,
    pub model_ff_dim: usize,
    pub model_rep_dim: usize,
    pub model_proj_dim: usize,
    pub model_pred_hidden_dim: usize,
    pub model_dae_hidden_dim: usize,
    pub model_positional_encoding: bool,
    pub model_input_scale: f64,
    pub temperature: f64,
    pub momentum: f64,
    pub alpha: f64,

    // training
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_peak_lr: f64,
    pub train_warmup_epochs: usize,
    pub train_weight_decay: f64,

    // embedding and clustering
    pub embed_method: EmbedMethod,
    pub pca_dims: usize,
    pub cluster_method: ClusterMethod,
    pub gmm_components: usize,
    pub gmm_k_max: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub gmm_reg: f64,
    pub gmm_n_init: usize,

    // evaluation
    pub match_delta_ms: f64,
    pub snr_floor: f64,
    pub protocol_n_units: usize,
    pub protocol_seeds: usize,
    pub protocol_gmm_runs: usize,
    pub ablation_pca_dims: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth_n_units: 8,
            synth_rows: 16,
            synth_cols: 4,
            synth_pitch_um: 20.0,
            synth_duration_s: 120.0,
            synth_sample_rate_hz: 30_000.0,
            synth_firing_rate_hz: 4.0,
            synth_amp_min_uv: 60.0,
            synth_amp_max_uv: 200.0,
            synth_noise_std_uv: 10.0,
            synth_noise_ar: 0.9,
            synth_decay_um: 25.0,
            synth_drift_amplitude_um: 0.0,
            synth_drift_cycles: 2.0,

            remove_bad_channels: true,
            bad_channel_factor: 5.0,
            bandpass_enabled: true,
            filter_low_hz: 300.0,
            filter_high_hz: 6000.0,
            filter_order: 3,

            detect_threshold_mads: 5.0,
            detect_polarity: Polarity::Negative,
            detect_refractory_ms: 0.5,
            detect_peak_window_ms: 0.7,
            detect_merge_radius_um: 100.0,
            snippet_t: 121,
            snippet_c: 21,

            aug_voltage_jitter_lo: 0.9,
            aug_voltage_jitter_hi: 1.1,
            aug_temporal_jitter_max: 4,
            aug_crop_channels: 11,
            aug_collision_prob: 0.5,
            aug_collision_scale_lo: 0.2,
            aug_collision_scale_hi: 1.0,
            aug_collision_offset_max: 30,
            aug_noise_scale_lo: 0.5,
            aug_noise_scale_hi: 2.0,
            aug_noise_ar: 0.9,

            model_conv_kernel: 5,
            model_embed_dim: 32,
            model_layers: 2,
            model_heads: 4,
            model_ff_dim: 64,
            model_rep_dim: 32,
            model_proj_dim: 64,
            model_pred_hidden_dim: 64,
            model_dae_hidden_dim: 64,
            model_positional_encoding: true,
            model_input_scale: 0.01,
            temperature: 0.2,
            momentum: 0.99,
            alpha: 0.2,

            train_epochs: 300,
            train_batch_size: 256,
            train_peak_lr: 1e-4,
            train_warmup_epochs: 10,
            train_weight_decay: 1e-2,

            embed_method: EmbedMethod::Model,
            pca_dims: 2,
            cluster_method: ClusterMethod::Gmm,
            gmm_components: 8,
            gmm_k_max: 16,
            gmm_max_iter: 100,
            gmm_tol: 1e-3,
            gmm_reg: 1e-6,
            gmm_n_init: 1,

            match_delta_ms: 1.0,
            snr_floor: 3.0,
            protocol_n_units: 10,
            protocol_seeds: 100,
            protocol_gmm_runs: 50,
            ablation_pca_dims: 2,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_spec(0).validate()?;
        self.augment_spec().validate()?;
        self.model_config().validate()?;
        self.train_config(0).validate()?;
        if self.snippet_t % 2 == 0 || self.snippet_c % 2 == 0 {
            return Err(Error::Config("snippet_t and snippet_c must be odd".into()));
        }
        if self.aug_crop_channels > self.snippet_c {
            return Err(Error::Config("aug_crop_channels exceeds snippet_c".into()));
        }
        if !(self.detect_threshold_mads > 0.0) {
            return Err(Error::Config("detect_threshold_mads must be positive".into()));
        }
        if self.gmm_components == 0 || self.gmm_k_max == 0 || self.gmm_n_init == 0 {
            return Err(Error::Config("GMM component counts and n_init must be positive".into()));
        }
        if !(self.match_delta_ms >= 0.0) {
            return Err(Error::Config("match_delta_ms must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_units: self.synth_n_units,
            rows: self.synth_rows,
            cols: self.synth_cols,
            pitch_um: self.synth_pitch_um,
            duration_s: self.synth_duration_s,
            sample_rate_hz: self.synth_sample_rate_hz,
            firing_rate_hz: self.synth_firing_rate_hz,
            amplitude_range_uv: (self.synth_amp_min_uv, self.synth_amp_max_uv),
            noise_std_uv: self.synth_noise_std_uv,
            noise_ar: self.synth_noise_ar,
            decay_um: self.synth_decay_um,
            template_samples: self.snippet_t,
            drift: DriftModel {
                amplitude_um: self.synth_drift_amplitude_um,
                n_cycles: self.synth_drift_cycles,
                duration_s: self.synth_duration_s,
            },
            seed,
        }
    }

    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            low_hz: self.filter_low_hz,
            high_hz: self.filter_high_hz,
            order: self.filter_order,
        }
    }

    pub fn detection_spec(&self, sample_rate_hz: f64) -> DetectionSpec {
        let samples = |ms: f64| ((ms * 1e-3 * sample_rate_hz).round() as usize).max(1);
        DetectionSpec {
            threshold_mads: self.detect_threshold_mads,
            polarity: self.detect_polarity,
            refractory_samples: samples(self.detect_refractory_ms),
            peak_window_samples: samples(self.detect_peak_window_ms),
            merge_radius_um: self.detect_merge_radius_um,
        }
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            voltage_jitter_range: (self.aug_voltage_jitter_lo, self.aug_voltage_jitter_hi),
            temporal_jitter_max: self.aug_temporal_jitter_max,
            crop_channels: self.aug_crop_channels,
            collision_prob: self.aug_collision_prob,
            collision_scale_range: (self.aug_collision_scale_lo, self.aug_collision_scale_hi),
            collision_offset_max: self.aug_collision_offset_max,
            noise_scale_range: (self.aug_noise_scale_lo, self.aug_noise_scale_hi),
            noise_ar_coeff: self.aug_noise_ar,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            snippet_t: self.snippet_t,
            snippet_c: self.snippet_c,
            conv_kernel: self.model_conv_kernel,
            embed_dim: self.model_embed_dim,
            n_layers: self.model_layers,
            n_heads: self.model_heads,
            ff_dim: self.model_ff_dim,
            rep_dim: self.model_rep_dim,
            proj_dim: self.model_proj_dim,
            pred_hidden_dim: self.model_pred_hidden_dim,
            dae_hidden_dim: self.model_dae_hidden_dim,
            temperature: self.temperature,
            momentum: self.momentum,
            alpha: self.alpha,
            positional_encoding: self.model_positional_encoding,
            input_scale: self.model_input_scale,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            peak_lr: self.train_peak_lr,
            warmup_epochs: self.train_warmup_epochs,
            weight_decay: self.train_weight_decay,
            seed,
        }
    }

    pub fn gmm_options(&self, seed: u64) -> GmmOptions {
        GmmOptions {
            max_iter: self.gmm_max_iter,
            tol: self.gmm_tol,
            reg: self.gmm_reg,
            seed,
            n_init: self.gmm_n_init,
        }
    }

    pub fn match_delta_samples(&self, sample_rate_hz: f64) -> usize {
        (self.match_delta_ms * 1e-3 * sample_rate_hz).round() as usize
    }
}
