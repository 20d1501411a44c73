//! Self-supervised spike representation learning and an end-to-end spike
//! sorting pipeline for multichannel extracellular recordings.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`data`]: recordings, probe geometry, ground truth and their file formats
//! - [`synth`]: synthetic ground-truth recordings with drift and correlated noise
//! - [`dsp`]: bad-channel removal, zero-phase band-pass, threshold detection, snippet extraction
//! - [`augment`]: view generation for contrastive training
//! - [`model`]: the contrastive + denoising representation network and its training loop
//! - [`cluster`]: Gaussian mixture EM and PCA
//! - [`eval`]: ARI, silhouette, event matching, evaluation protocols and significance tests
//! - [`pipeline`]: the subcommands driven by the `spikerep` binary

pub mod augment;
pub mod cluster;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
