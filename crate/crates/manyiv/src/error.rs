//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by data reduction, estimation, and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    /// The residual covariance estimate S is singular or not positive definite.
    #[error("residual covariance S is not positive definite: {0}")]
    DegenerateS(String),

    /// The combined design matrix (W, Z) lost rank during factorization.
    #[error("design matrix is rank deficient at column {column} (0-based, within (W, Z))")]
    RankDeficient { column: usize },

    /// A dense n-by-n computation was requested above the configured size cap.
    #[error("n = {n} exceeds the dense-diagnostics cap of {cap}; raise the cap to force the O(n^2) computation")]
    TooLarge { n: usize, cap: usize },

    /// The point estimate is not identified (vanishing denominator or tied eigenvalues).
    #[error("estimator not identified: {0}")]
    Unidentified(String),

    /// The estimated signal strength is zero, so the inverse-Hessian variance is undefined.
    #[error("lambda_hat = 0 (m_max <= K/n): inverse-Hessian standard error undefined")]
    WeakInstruments,

    /// The annihilator power sums are too close to zero to normalize the moment estimators.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// The iterative minimizer failed to reach the gradient tolerance.
    #[error("minimizer did not converge in {iterations} iterations (best beta = {beta_best}, gradient norm = {grad_norm:.3e})")]
    NoConvergence {
        iterations: usize,
        beta_best: f64,
        xi22_best: f64,
        grad_norm: f64,
    },

    /// Overidentification tests require at least two instruments.
    #[error("model is just identified (K = 1); overidentification test undefined")]
    JustIdentified,

    /// The dataset violates a structural invariant (dimensions, rank, missing values).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A simulation specification is internally inconsistent.
    #[error("invalid simulation spec: {0}")]
    Spec(String),

    /// A numerical guard tripped (quantities that are positive in exact arithmetic were not).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
