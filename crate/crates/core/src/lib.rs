//! Latent factor analysis for short panels (large cross-section, fixed number
//! of periods).
//!
//! The crate estimates k-factor models by Gaussian pseudo maximum likelihood,
//! tests the number of factors with the likelihood-ratio statistic under a
//! weighted chi-square limit that accommodates block cross-sectional
//! dependence, decomposes the cross-sectional variance into systematic and
//! idiosyncratic parts, runs rank tests for spanning by observed factors, and
//! checks monotone-likelihood-ratio conditions for the noncentral weighted
//! chi-square family numerically.

pub mod estimator;
pub mod linalg;
pub mod lr;
pub mod mlr;
pub mod montecarlo;
pub mod panel;
pub mod rank;
pub mod rng;
pub mod varstruct;

pub use estimator::{constrained_estimate_spherical, df, estimate, FaEstimate};
pub use linalg::SymMat;

pub use panel::Panel;
