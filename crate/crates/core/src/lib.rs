//! Multilevel functional principal component analysis for densely observed,
//! repeatedly measured curves.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] and [`curves`]: evaluation grids, trapezoidal quadrature and
//!   nested curve collections.
//! * [`eigen`], [`smooth`] and [`fpca`]: single-level FPCA building blocks.
//! * [`mfpca`]: nested two- and three-level models with BLUP scores.
//! * [`icc`]: pointwise and global functional intraclass correlation.
//! * [`leveltest`]: score-distribution tests between hierarchy levels.
//! * [`simkl`]: seeded Karhunen–Loève generator used as ground truth.
//! * [`ingest`]: long-format CSV datasets and fit directories.

pub mod curves;
pub mod eigen;
pub mod error;
pub mod fpca;
pub mod grid;
pub mod icc;
pub mod ingest;
pub mod leveltest;
pub mod mfpca;
pub mod rng;
pub mod simkl;
pub mod smooth;

pub use curves::{CurveSet, NestedIndex};
pub use eigen::EigenSystem;
pub use error::{Error, ErrorKind, Result};
pub use grid::{Curve, Grid};

/// Library version string written into every artifact manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Format tag for datasets and fit directories.
pub const FORMAT_VERSION: &str = "mfda-v1";
