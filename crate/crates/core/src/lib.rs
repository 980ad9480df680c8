//! Loss discrepancy across groups induced by feature noise in linear regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`] - dense SPD solves, Sherman-Morrison updates, adaptive Simpson
//!   quadrature and weighted moments.
//! - [`population`] - the two-group Gaussian-mixture latent model and its exact moments.
//! - [`estimators`] - population least-squares predictors with and without the group
//!   indicator, infinite-noise limits and the 1-D Bayes-optimal predictor.
//! - [`discrepancy`] - statistical (SLD) and counterfactual (CLD) loss discrepancy for
//!   residual and squared-error losses.
//! - [`shift`] - persistence of discrepancy when training data mixes in a shifted
//!   distribution whose groups share a mean.
//! - [`empirical`] - seeded sampling, finite-sample OLS, noise injection and empirical
//!   discrepancy estimates (the Monte-Carlo oracle layer).
//! - [`reweight`] - the mean-equalising reweighting LP and a bounded-variable simplex.
//!
//! All covariances use the population convention (divisor = total weight, not `n - 1`).

pub mod discrepancy;
pub mod empirical;
pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod numerics;
pub mod population;
pub mod reweight;
pub mod shift;

pub use discrepancy::{CldBasis, DiscrepancyReport, ReportSource, StdErrors};
pub use empirical::{Dataset, Seed};
pub use error::{Error, Result};
pub use estimators::{LinearPredictor, NoiseRatio, ObservationMode};
pub use numerics::{Matrix, Vector};
pub use population::{GroupSpec, NoiseFamily, NoiseSpec, PopulationSpec, TrueLinearModel};
pub use reweight::{LpProblem, LpSolution, LpStatus};
pub use shift::{PersistenceCurve, ShiftScenario};

/// Version tag embedded in every serialized document.
pub const SCHEMA_VERSION: u32 = 1;
