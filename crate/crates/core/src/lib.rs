//! Numerical laboratory for multivariate martingale central limit machinery.
//!
//! The crate simulates stable AR(d) models driven by mean-zero innovations,
//! evaluates the triangular-array condition statistics that govern their
//! normalized least-squares estimators (conditional Lindeberg sums, Raikov
//! and norming matrices, truncation families, maxima), and verifies the
//! limit statements by seeded Monte Carlo: marginal normality, covariance
//! targets, mixing (asymptotic independence), condition decay, and Gram
//! rank events.
//!
//! Layout:
//! - [`matrix`]: dense small-dimension linear algebra and stability constants;
//! - [`innovations`]: innovation laws with exact truncated moments;
//! - [`ar`]: AR(d) simulation, least squares, stationary covariance;
//! - [`diagnostics`]: per-row condition statistics and the inequality audit;
//! - [`mc`]: the replication engine and statistical tests;
//! - [`rng`]: the pinned deterministic generator and substream rule.

pub mod ar;
pub mod diagnostics;
pub mod error;
pub mod innovations;
pub mod matrix;
pub mod mc;
pub mod rng;

pub use ar::{ArParams, ArPath, SigmaResult};
pub use diagnostics::{ArrayRow, ConditionReport, TruncatedRow};
pub use error::{Error, Result};
pub use innovations::InnovationSpec;
pub use matrix::{Mat, StabilityConstants, SymMat};
pub use mc::{KsResult, McConfig, McSummary};
pub use rng::RngStream;
