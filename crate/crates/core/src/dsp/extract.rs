use ndarray::Array2;

use crate::data::{GroundTruth, Recording, SpikeEvent, WaveformSnippet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub snippets: Vec<WaveformSnippet>,
    /// Indices into the input event list that were too close to an edge.
    pub dropped: Vec<usize>,
    /// Input event index of each kept snippet.
    pub kept: Vec<usize>,
}

/// Cuts a T×C window around each event, on the C channels nearest its peak
/// channel (ascending distance, ties by index). Snippet order follows the
/// input event order.
pub fn extract_snippets(rec: &Recording, events: &[SpikeEvent], t: usize, c: usize) -> Result<Extraction> {
    if t == 0 || t % 2 == 0 {
        return Err(Error::Invalid(format!("snippet length must be odd, got {t}")));
    }
    if c == 0 || c % 2 == 0 {
        return Err(Error::Invalid(format!("snippet channel count must be odd, got {c}")));
    }
    if c > rec.n_channels {
        return Err(Error::Invalid(format!(
            "snippet channel count {c} exceeds recording channels {}",
            rec.n_channels
        )));
    }
    if t > rec.n_frames {
        return Err(Error::Invalid(format!("snippet length {t} exceeds recording length {}", rec.n_frames)));
    }
    let half = (t - 1) / 2;
    let nc = rec.n_channels;
    let mut neighbourhoods: Vec<Option<Vec<usize>>> = vec![None; nc];
    let mut out = Extraction::default();
    for (i, ev) in events.iter().enumerate() {
        if ev.channel >= nc {
            return Err(Error::Invalid(format!("event channel {} out of range", ev.channel)));
        }
        if ev.frame < half || ev.frame + half >= rec.n_frames {
            out.dropped.push(i);
            continue;
        }
        let chans = neighbourhoods[ev.channel]
            .get_or_insert_with(|| rec.geometry.nearest_channels(ev.channel, c))
            .clone();
        let start = ev.frame - half;
        let values = Array2::from_shape_fn((t, c), |(ti, ci)| rec.samples[(start + ti) * nc + chans[ci]] as f64);
        out.snippets.push(WaveformSnippet {
            values,
            channels: chans,
            peak_channel_global: ev.channel,
            event_frame: ev.frame,
        });
        out.kept.push(i);
    }
    Ok(out)
}

/// Builds one event per ground-truth spike, anchored on the most negative
/// sample among channels within `radius_um` of the unit's peak channel.
/// Returns the events (sorted by frame) and the matching unit labels.
pub fn ground_truth_events(rec: &Recording, gt: &GroundTruth, radius_um: f64) -> Result<(Vec<SpikeEvent>, Vec<u32>)> {
    gt.validate(rec.n_frames)?;
    let nc = rec.n_channels;
    let mut pairs = Vec::with_capacity(gt.n_spikes());
    for (&unit, frames) in &gt.units {
        if frames.is_empty() {
            continue;
        }
        let peak = crate::synth::unit_peak_channel(rec, frames);
        let local: Vec<usize> = (0..nc)
            .filter(|&ch| rec.geometry.distance(peak, ch) <= radius_um)
            .collect();
        for &f in frames {
            let (mut best_c, mut best_v) = (peak, f64::INFINITY);
            for &ch in &local {
                let v = rec.samples[f * nc + ch] as f64;
                if v < best_v {
                    best_v = v;
                    best_c = ch;
                }
            }
            pairs.push((
                SpikeEvent {
                    frame: f,
                    channel: best_c,
                    amplitude: best_v,
                },
                unit,
            ));
        }
    }
    pairs.sort_by(|a, b| (a.0.frame, a.1).cmp(&(b.0.frame, b.1)));
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ProbeGeometry;

    fn ramp_recording() -> Recording {
        let g = ProbeGeometry::grid(16, 4, 20.0).unwrap();
        let n = 1000;
        let samples = (0..n * 64).map(|i| (i % 977) as f32).collect();
        Recording::new(30_000.0, n, samples, g).unwrap()
    }

    fn ev(frame: usize, channel: usize) -> SpikeEvent {
        SpikeEvent {
            frame,
            channel,
            amplitude: -1.0,
        }
    }

    #[test]
    fn default_shape_is_121_by_21() {
        let rec = ramp_recording();
        let ex = extract_snippets(&rec, &[ev(500, 30)], 121, 21).unwrap();
        assert_eq!(ex.snippets[0].values.dim(), (121, 21));
        assert_eq!(ex.snippets[0].channels[0], 30);
        assert_eq!(ex.snippets[0].values[[60, 0]], rec.get(500, 30) as f64);
        assert_eq!(ex.snippets[0].values[[0, 3]], rec.get(440, ex.snippets[0].channels[3]) as f64);
    }

    #[test]
    fn edge_events_are_dropped() {
        let rec = ramp_recording();
        let ex = extract_snippets(&rec, &[ev(10, 0), ev(500, 1), ev(990, 2)], 121, 21).unwrap();
        assert_eq!(ex.dropped, vec![0, 2]);
        assert_eq!(ex.kept, vec![1]);
    }

    #[test]
    fn single_channel_snippet_is_peak_channel() {
        let rec = ramp_recording();
        let ex = extract_snippets(&rec, &[ev(500, 17)], 121, 1).unwrap();
        assert_eq!(ex.snippets[0].channels, vec![17]);
    }

    #[test]
    fn channel_order_independent_of_event_order() {
        let rec = ramp_recording();
        let evs = [ev(300, 5), ev(500, 40), ev(700, 63)];
        let a = extract_snippets(&rec, &evs, 61, 9).unwrap();
        let rev: Vec<_> = evs.iter().rev().copied().collect();
        let b = extract_snippets(&rec, &rev, 61, 9).unwrap();
        for (x, y) in a.snippets.iter().zip(b.snippets.iter().rev()) {
            assert_eq!(x.channels, y.channels);
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn bad_sizes_rejected() {
        let rec = ramp_recording();
        assert!(extract_snippets(&rec, &[], 120, 21).is_err());
        assert!(extract_snippets(&rec, &[], 121, 65).is_err());
        assert!(extract_snippets(&rec, &[], 1001, 21).is_err());
    }
}
