//! Gaussian mixture clustering and principal component analysis.

mod gmm;
pub mod linalg;
mod pca;

pub use gmm::{gmm_assign, gmm_fit, gmm_fit_bic, GmmModel, GmmOptions};
pub use pca::{flatten_rows, pca_fit, pca_transform, PcaModel};
