//! Preprocessing, threshold detection and snippet extraction.

mod channels;
mod detect;
mod extract;
mod filter;

pub use channels::{channel_stds, remove_bad_channels, DEFAULT_BAD_CHANNEL_FACTOR};
pub use detect::{detect, DetectionSpec, Polarity};
pub use extract::{extract_snippets, ground_truth_events, Extraction};
pub use filter::{bandpass, bandpass_in_place, BandpassFilter, FilterSpec, Section};

/// Applies `f` to every channel of `rec` as a 1-D `f64` signal.
/// Channels are processed in small groups to bound memory on long recordings.
pub(crate) fn map_channels<F>(rec: &mut crate::data::Recording, f: F)
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    const GROUP: usize = 8;
    let nc = rec.n_channels;
    let mut start = 0;
    while start < nc {
        let chans: Vec<usize> = (start..(start + GROUP).min(nc)).collect();
        let inputs: Vec<Vec<f64>> = chans.iter().map(|&c| rec.channel(c)).collect();
        #[cfg(feature = "parallel")]
        let outputs: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            inputs.par_iter().map(|x| f(x)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let outputs: Vec<Vec<f64>> = inputs.iter().map(|x| f(x)).collect();
        for (&c, y) in chans.iter().zip(&outputs) {
            rec.set_channel(c, y);
        }
        start += GROUP;
    }
}
