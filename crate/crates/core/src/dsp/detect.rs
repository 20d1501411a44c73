use serde::{Deserialize, Serialize};

use crate::data::{Recording, SpikeEvent};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Negative,
    Positive,
    Both,
}

impl Polarity {
    #[inline]
    fn score(self, v: f64) -> f64 {
        match self {
            Polarity::Negative => -v,
            Polarity::Positive => v,
            Polarity::Both => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionSpec {
    /// Threshold in units of the robust noise level 1.4826·MAD.
    pub threshold_mads: f64,
    pub polarity: Polarity,
    pub refractory_samples: usize,
    pub peak_window_samples: usize,
    pub merge_radius_um: f64,
}

impl Default for DetectionSpec {
    fn default() -> Self {
        Self {
            threshold_mads: 5.0,
            polarity: Polarity::Negative,
            refractory_samples: 15,
            peak_window_samples: 21,
            merge_radius_um: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    frame: usize,
    channel: usize,
    amplitude: f64,
    score: f64,
}

impl Candidate {
    /// Strict total order used for suppression: larger score wins, then
    /// earlier frame, then lower channel.
    fn beats(&self, other: &Candidate) -> bool {
        self.score > other.score
            || (self.score == other.score && (self.frame, self.channel) < (other.frame, other.channel))
    }
}

fn channel_candidates(x: &[f64], channel: usize, d: &DetectionSpec) -> Vec<Candidate> {
    let sigma = stats::robust_sigma(x);
    let thr = d.threshold_mads * sigma;
    let score: Vec<f64> = x.iter().map(|&v| d.polarity.score(v)).collect();
    let n = x.len();
    let pw = d.peak_window_samples;
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if score[i] <= thr {
            i += 1;
            continue;
        }
        // supra-threshold run [i, j)
        let mut j = i;
        let mut best = i;
        while j < n && score[j] > thr {
            if score[j] > score[best] {
                best = j;
            }
            j += 1;
        }
        // keep only extrema of the ±peak_window neighbourhood
        let lo = best.saturating_sub(pw);
        let hi = (best + pw + 1).min(n);
        let is_peak = (lo..best).all(|k| score[k] < score[best]) && (best + 1..hi).all(|k| score[k] <= score[best]);
        if is_peak {
            out.push(Candidate {
                frame: best,
                channel,
                amplitude: x[best],
                score: score[best],
            });
        }
        i = j;
    }
    out
}

/// Threshold detection with spatio-temporal local-maximum merging.
///
/// A candidate is the extremum of a supra-threshold run on one channel that
/// is also the extremum within ±`peak_window_samples`. Candidates are then
/// dropped when another candidate within `merge_radius_um` (same channel
/// included) and `refractory_samples` frames has a larger amplitude, so each
/// spike survives once, on its peak channel. Output is sorted by frame.
pub fn detect(rec: &Recording, d: &DetectionSpec) -> Vec<SpikeEvent> {
    let nc = rec.n_channels;
    let per_channel = |c: usize| channel_candidates(&rec.channel(c), c, d);
    #[cfg(feature = "parallel")]
    let lists: Vec<Vec<Candidate>> = {
        use rayon::prelude::*;
        (0..nc).into_par_iter().map(per_channel).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let lists: Vec<Vec<Candidate>> = (0..nc).map(per_channel).collect();

    let mut cands: Vec<Candidate> = lists.into_iter().flatten().collect();
    cands.sort_by(|a, b| (a.frame, a.channel).cmp(&(b.frame, b.channel)));

    let neighbours: Vec<Vec<bool>> = (0..nc)
        .map(|a| (0..nc).map(|b| rec.geometry.distance(a, b) <= d.merge_radius_um).collect())
        .collect();

    let refr = d.refractory_samples;
    let mut events = Vec::new();
    let mut lo = 0;
    for i in 0..cands.len() {
        let ci = cands[i];
        while cands[lo].frame + refr < ci.frame {
            lo += 1;
        }
        let mut suppressed = false;
        let mut j = lo;
        while j < cands.len() && cands[j].frame <= ci.frame + refr {
            if j != i && neighbours[ci.channel][cands[j].channel] && cands[j].beats(&ci) {
                suppressed = true;
                break;
            }
            j += 1;
        }
        if !suppressed {
            events.push(SpikeEvent {
                frame: ci.frame,
                channel: ci.channel,
                amplitude: ci.amplitude,
            });
        }
    }
    events
}
