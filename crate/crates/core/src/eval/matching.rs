use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{GroundTruth, Recording, SortingResult};
use crate::error::{Error, Result};
use crate::stats;
use crate::synth::snr_of_unit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchCounts {
    /// Ground-truth events with no partner.
    pub n1: usize,
    /// Matched pairs.
    pub n2: usize,
    /// Sorter events with no partner.
    pub n3: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
}

fn check_sorted(xs: &[usize], what: &str) -> Result<()> {
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid(format!("{what} frames are not sorted")));
    }
    Ok(())
}

/// One-to-one matching within ±`delta` samples. Candidate pairs are taken
/// greedily, closest first (ties by the earlier frame), so swapping the two
/// lists swaps `n1` and `n3` and keeps `n2`.
pub fn match_events(gt: &[usize], sorted: &[usize], delta: usize) -> Result<MatchCounts> {
    check_sorted(gt, "ground-truth")?;
    check_sorted(sorted, "sorter")?;
    let mut pairs: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    let mut lo = 0;
    for (i, &g) in gt.iter().enumerate() {
        while lo < sorted.len() && sorted[lo] + delta < g {
            lo += 1;
        }
        let mut j = lo;
        while j < sorted.len() && sorted[j] <= g + delta {
            let s = sorted[j];
            pairs.push((g.abs_diff(s), g.min(s), g.max(s), i, j));
            j += 1;
        }
    }
    pairs.sort_unstable_by_key(|p| (p.0, p.1, p.2));
    let mut used_g = vec![false; gt.len()];
    let mut used_s = vec![false; sorted.len()];
    let mut n2 = 0;
    for &(_, _, _, i, j) in &pairs {
        if !used_g[i] && !used_s[j] {
            used_g[i] = true;
            used_s[j] = true;
            n2 += 1;
        }
    }
    Ok(MatchCounts {
        n1: gt.len() - n2,
        n2,
        n3: sorted.len() - n2,
    })
}

/// precision = n2/(n2+n3), recall = n2/(n1+n2), accuracy = n2/(n1+n2+n3).
pub fn scores_from_counts(c: MatchCounts) -> Result<Scores> {
    if c.n1 + c.n2 == 0 || c.n2 + c.n3 == 0 {
        return Err(Error::Invalid(format!("metrics undefined for counts {c:?}")));
    }
    let n2 = c.n2 as f64;
    Ok(Scores {
        accuracy: n2 / (c.n1 + c.n2 + c.n3) as f64,
        recall: n2 / (c.n1 + c.n2) as f64,
        precision: n2 / (c.n2 + c.n3) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitScore {
    pub gt_unit_id: u32,
    pub snr: f64,
    /// Best-matching sorter label; absent when the sorter produced no units.
    pub matched_sorter_label: Option<u32>,
    pub counts: MatchCounts,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    /// Set when a denominator was zero and the metric was reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

impl MeanSem {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: stats::mean(xs),
            sem: if xs.len() > 1 { stats::sem(xs) } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortingReport {
    pub delta_samples: usize,
    pub snr_floor: f64,
    pub units: Vec<UnitScore>,
    pub accuracy: MeanSem,
    pub recall: MeanSem,
    pub precision: MeanSem,
}

impl SortingReport {
    /// Aligned text table, one row per evaluated unit plus the aggregate.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6} {:>8} {:>6} {:>9} {:>9} {:>9}", "unit", "snr", "label", "accuracy", "recall", "precision");
        for u in &self.units {
            let label = u.matched_sorter_label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(
                s,
                "{:>6} {:>8.2} {:>6} {:>9.4} {:>9.4} {:>9.4}{}",
                u.gt_unit_id,
                u.snr,
                label,
                u.accuracy,
                u.recall,
                u.precision,
                if u.undefined { " *" } else { "" }
            );
        }
        let _ = writeln!(
            s,
            "mean ± SEM: accuracy {:.4} ± {:.4}, recall {:.4} ± {:.4}, precision {:.4} ± {:.4}",
            self.accuracy.mean, self.accuracy.sem, self.recall.mean, self.recall.sem, self.precision.mean, self.precision.sem
        );
        let _ = writeln!(s, "delta = {} samples, SNR floor = {}", self.delta_samples, self.snr_floor);
        s
    }
}

fn lenient_scores(c: MatchCounts) -> (Scores, bool) {
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let acc = ratio(c.n2, c.n1 + c.n2 + c.n3);
    let rec = ratio(c.n2, c.n1 + c.n2);
    let prec = ratio(c.n2, c.n2 + c.n3);
    let undefined = acc.is_none() || rec.is_none() || prec.is_none();
    (
        Scores {
            accuracy: acc.unwrap_or(0.0),
            recall: rec.unwrap_or(0.0),
            precision: prec.unwrap_or(0.0),
        },
        undefined,
    )
}

/// Scores every ground-truth unit whose SNR exceeds `snr_floor` against its
/// best-matching sorter label (highest accuracy, ties to the lower label).
pub fn score_sorting_with_snr(
    gt: &GroundTruth,
    sr: &SortingResult,
    delta: usize,
    snr_floor: f64,
    snrs: &BTreeMap<u32, f64>,
) -> Result<SortingReport> {
    let trains = sr.spike_trains();
    let mut units = Vec::new();
    for (&id, frames) in &gt.units {
        let snr = *snrs
            .get(&id)
            .ok_or_else(|| Error::Invalid(format!("no SNR for unit {id}")))?;
        if !(snr > snr_floor) {
            continue;
        }
        let mut best: Option<(f64, u32, MatchCounts)> = None;
        for (&label, train) in &trains {
            let c = match_events(frames, train, delta)?;
            let (s, _) = lenient_scores(c);
            if best.as_ref().is_none_or(|(a, _, _)| s.accuracy > *a) {
                best = Some((s.accuracy, label, c));
            }
        }
        let (label, counts) = match best {
            Some((_, l, c)) => (Some(l), c),
            None => (
                None,
                MatchCounts {
                    n1: frames.len(),
                    n2: 0,
                    n3: 0,
                },
            ),
        };
        let (s, undefined) = lenient_scores(counts);
        units.push(UnitScore {
            gt_unit_id: id,
            snr,
            matched_sorter_label: label,
            counts,
            accuracy: s.accuracy,
            recall: s.recall,
            precision: s.precision,
            undefined,
        });
    }
    if units.is_empty() {
        return Err(Error::Invalid(format!("no ground-truth unit has SNR above {snr_floor}")));
    }
    let col = |f: fn(&UnitScore) -> f64| MeanSem::of(&units.iter().map(f).collect::<Vec<_>>());
    Ok(SortingReport {
        delta_samples: delta,
        snr_floor,
        accuracy: col(|u| u.accuracy),
        recall: col(|u| u.recall),
        precision: col(|u| u.precision),
        units,
    })
}

/// [`score_sorting_with_snr`] with SNRs measured on `rec`.
pub fn score_sorting(
    gt: &GroundTruth,
    sr: &SortingResult,
    delta: usize,
    snr_floor: f64,
    rec: &Recording,
) -> Result<SortingReport> {
    let mut snrs = BTreeMap::new();
    for &id in gt.units.keys() {
        snrs.insert(id, snr_of_unit(rec, gt, id)?);
    }
    score_sorting_with_snr(gt, sr, delta, snr_floor, &snrs)
}
