//! Estimation and inference for linear instrumental-variable models with
//! one endogenous regressor and many (possibly weak, possibly
//! group-structured) instruments.
//!
//! The crate reduces a dataset to a small set of sufficient statistics —
//! two 2×2 cross-moment matrices and the instrument counts — and computes
//! everything from them:
//!
//! - [`reduce`]: orthogonalization, sufficient statistics, and design
//!   diagnostics (leverage imbalance, annihilator power sums);
//! - [`estimators`]: the eigenvalue/likelihood-based estimator, restricted
//!   and efficient minimum-distance, the bias-corrected unrestricted
//!   estimator, and the positivity-respecting mixture;
//! - [`variance`]: higher-moment estimation, the asymptotic covariance of
//!   the moment vector, and the standard errors for each estimator;
//! - [`overid`]: overidentification tests that stay accurate with many
//!   instruments;
//! - [`registry`]: name-based strategy lookup used by configuration and
//!   the command line;
//! - [`mc`]: data-generating processes, a compiled fast simulation path,
//!   the parallel study runner, and closed-form asymptotic variances.
//!
//! All matrix plumbing for the 2×2 problem lives in [`matcalc`], including
//! the symmetric-pencil eigenvalue solver and the duplication/elimination
//! matrices for `vech` calculus.

pub mod error;
pub mod estimators;
pub mod matcalc;
pub mod mc;
pub mod overid;
pub mod reduce;
pub mod registry;
pub mod variance;

pub use error::{Error, Result};
