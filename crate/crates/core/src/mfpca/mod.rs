//! Nested multilevel functional PCA (two- and three-level models).
//!
//! Moment estimators produce one covariance surface per level, each surface
//! is eigendecomposed with negative pairs trimmed, and scores for all levels
//! are predicted jointly per subject by BLUP.

mod blup;
mod covariance;
mod fit;

pub use blup::{blup_scores, BlupScores};
pub use covariance::{
    estimate_noise, g_total, measure_means, sandwich_covariance, sigma_b_hat, sigma_t_hat,
    sigma_w_hat, three_level_covariances, two_level_covariances, LevelCovariances,
    ThreeLevelSurfaces,
};
pub use fit::{
    fit_nested, unit_keys, FitConfig, LevelFit, MeasureMeanMode, MultilevelFit, UnitKey,
};
