use ndarray::Array2;
use proptest::prelude::*;
use spikerep::augment::{make_view_pair, pad_view, AugmentSpec};
use spikerep::config::PipelineConfig;
use spikerep::model::{make_batch_views, target_keys, ModelConfig, ModelState};
use spikerep::rng::rng_from;
use spikerep::synth::{drift_displacement, generate_recording, DriftModel};

fn small_synth(seed: u64, n_units: usize, drift: f64) -> PipelineConfig {
    PipelineConfig {
        synth_n_units: n_units,
        synth_rows: 8,
        synth_cols: 2,
        synth_duration_s: 3.0,
        synth_noise_std_uv: 0.0,
        synth_drift_amplitude_um: drift,
        synth_firing_rate_hz: 5.0 + (seed % 3) as f64,
        ..PipelineConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Each spike of a lone unit sits at a local minimum of its peak channel.
    #[test]
    fn ground_truth_frames_are_local_extrema(seed in 0u64..1000) {
        let cfg = small_synth(seed, 1, 0.0);
        let (rec, gt) = generate_recording(&cfg.synth_spec(seed)).unwrap();
        let frames = &gt.units[&0];
        let peak = spikerep::synth::unit_peak_channel(&rec, frames);
        let x = rec.channel(peak);
        for &f in frames {
            let found = (f.saturating_sub(2)..=f + 2)
                .filter(|&j| j >= 1 && j + 1 < x.len())
                .any(|j| x[j] <= x[j - 1] && x[j] <= x[j + 1]);
            prop_assert!(found, "frame {}", f);
        }
    }

    #[test]
    fn refractory_gap_holds(seed in 0u64..1000) {
        let cfg = small_synth(seed, 3, 20.0);
        let (rec, gt) = generate_recording(&cfg.synth_spec(seed)).unwrap();
        let min_gap = (0.002 * rec.sample_rate_hz) as usize;
        for frames in gt.units.values() {
            prop_assert!(frames.windows(2).all(|w| w[1] - w[0] >= min_gap));
        }
    }

    #[test]
    fn drift_never_exceeds_amplitude(amp in 0.0f64..50.0, cycles in 0.0f64..5.0, frac in 0.0f64..=1.0) {
        let d = DriftModel { amplitude_um: amp, n_cycles: cycles, duration_s: 600.0 };
        let v = drift_displacement(&d, frac * 600.0).unwrap();
        prop_assert!(v.abs() <= amp + 1e-12);
    }

    #[test]
    fn views_keep_shape_and_finiteness(
        t in 5usize..40, c in 1usize..12, seed in any::<u64>(),
        jitter in 0usize..4, offset in 0usize..10, noise_hi in 0.0f64..3.0,
    ) {
        let t = t | 1;
        let mut r = rng_from(seed);
        let snippets: Vec<Array2<f64>> = (0..3)
            .map(|k| Array2::from_shape_fn((t, c), |(i, j)| ((i * 31 + j * 7 + k) % 17) as f64 - 8.0))
            .collect();
        let spec = AugmentSpec {
            temporal_jitter_max: jitter.min(t / 2),
            crop_channels: 1 + (seed as usize % c),
            collision_offset_max: offset.min(t - 1),
            noise_scale_range: (0.0, noise_hi),
            ..AugmentSpec::default()
        };
        let vp = make_view_pair(&snippets[0], &snippets, &spec, &mut r);
        for (v, idx) in [(&vp.view1, &vp.channels1), (&vp.view2, &vp.channels2), (&vp.clean, &vp.channels1)] {
            let (padded, mask) = pad_view(v, idx, c);
            prop_assert_eq!(padded.dim(), (t, c));
            prop_assert!(padded.iter().all(|x| x.is_finite()));
            prop_assert_eq!(mask.iter().filter(|&&m| m == 1.0).count(), spec.crop_channels);
        }
    }
}

#[test]
fn keys_are_unit_norm() {
    let cfg = ModelConfig {
        snippet_t: 21,
        snippet_c: 5,
        input_scale: 1.0,
        ..ModelConfig::default()
    };
    let st = ModelState::new(&cfg, 4).unwrap();
    let snippets: Vec<Array2<f64>> =
        (0..6).map(|k| Array2::from_shape_fn((21, 5), |(i, j)| ((i * 3 + j + k) % 7) as f64 - 3.0)).collect();
    let aug = AugmentSpec {
        crop_channels: 3,
        ..AugmentSpec::default()
    };
    let views = make_batch_views(&snippets, &aug, 1, 0);
    let (k1, k2) = target_keys(&st, &views);
    for row in k1.rows().into_iter().chain(k2.rows()) {
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
    }
}
