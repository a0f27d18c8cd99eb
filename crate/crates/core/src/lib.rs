//! Supervised principal component regression for functional responses.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common case.

pub mod covariance;
pub mod dataset;
pub mod error;
pub mod io;
mod linalg;
pub mod metrics;
pub mod rng;
mod scalar;
pub mod simulate;
pub mod smoothing;
pub mod solver;
pub mod spcr;
pub mod spectral;

pub use dataset::{FunctionalDataset, Grid};
pub use error::{Result, SpcrError};
pub use linalg::{orthonormal_basis, principal_angles};
pub use scalar::Scalar;
pub use solver::{DirectionMatrix, Normalization, SolverConfig};
pub use spcr::{FitConfig, FitReport, Method, SpcrModel};

pub type GridF64 = Grid<f64>;
pub type GridF32 = Grid<f32>;
pub type FunctionalDatasetF64 = FunctionalDataset<f64>;
pub type FunctionalDatasetF32 = FunctionalDataset<f32>;
pub type DirectionMatrixF64 = DirectionMatrix<f64>;
pub type DirectionMatrixF32 = DirectionMatrix<f32>;
pub type SpcrModelF64 = SpcrModel<f64>;
pub type SpcrModelF32 = SpcrModel<f32>;
pub type FitReportF64 = FitReport<f64>;
pub type FitReportF32 = FitReport<f32>;
