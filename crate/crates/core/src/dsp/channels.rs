use crate::data::Recording;
use crate::error::{Error, Result};
use crate::stats;

pub const DEFAULT_BAD_CHANNEL_FACTOR: f64 = 5.0;

/// Population standard deviation of every channel.
pub fn channel_stds(rec: &Recording) -> Vec<f64> {
    let nc = rec.n_channels;
    let mut sum = vec![0f64; nc];
    let mut sq = vec![0f64; nc];
    for frame in rec.samples.chunks_exact(nc) {
        for (c, &v) in frame.iter().enumerate() {
            let v = v as f64;
            sum[c] += v;
            sq[c] += v * v;
        }
    }
    let n = rec.n_frames as f64;
    sum.iter()
        .zip(&sq)
        .map(|(s, q)| {
            let m = s / n;
            (q / n - m * m).max(0.0).sqrt()
        })
        .collect()
}

/// Drops dead channels (zero std) and channels whose std differs from the
/// median channel std by more than `factor` in either direction.
/// Returns the reduced recording and the removed channel indices.
pub fn remove_bad_channels(rec: &Recording, factor: f64) -> Result<(Recording, Vec<usize>)> {
    let stds = channel_stds(rec);
    let med = stats::median(&stds);
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for (c, &s) in stds.iter().enumerate() {
        let bad = s == 0.0 || med == 0.0 || s > factor * med || s * factor < med;
        if bad {
            removed.push(c);
        } else {
            keep.push(c);
        }
    }
    if keep.is_empty() {
        return Err(Error::Invalid("every channel was classified as bad".into()));
    }
    if removed.is_empty() {
        return Ok((rec.clone(), removed));
    }
    Ok((rec.select_channels(&keep)?, removed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ProbeGeometry;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_recording(nc: usize, n: usize, seed: u64) -> Recording {
        let mut rng = crate::rng::rng_from(seed);
        let samples = (0..n * nc)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (10.0 * z) as f32
            })
            .collect();
        Recording::new(30_000.0, n, samples, ProbeGeometry::grid(nc, 1, 20.0).unwrap()).unwrap()
    }

    #[test]
    fn dead_channel_removed() {
        let mut rec = noise_recording(8, 2000, 1);
        for f in 0..rec.n_frames {
            rec.samples[f * 8 + 3] = 0.0;
        }
        let (out, removed) = remove_bad_channels(&rec, 5.0).unwrap();
        assert_eq!(removed, vec![3]);
        assert_eq!(out.n_channels, 7);
        assert_eq!(out.geometry.channel_positions[3], rec.geometry.channel_positions[4]);
    }

    #[test]
    fn homogeneous_noise_keeps_everything() {
        let rec = noise_recording(8, 2000, 2);
        let (out, removed) = remove_bad_channels(&rec, 5.0).unwrap();
        assert!(removed.is_empty());
        assert_eq!(out, rec);
    }

    #[test]
    fn all_dead_is_an_error() {
        let rec = Recording::zeros(30_000.0, 100, ProbeGeometry::grid(4, 1, 20.0).unwrap()).unwrap();
        assert!(remove_bad_channels(&rec, 5.0).is_err());
    }
}
