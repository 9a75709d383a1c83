//! Population (closed-form) counterparts of the estimated quantities:
//! standardized higher moments of the error families, the implied third-
//! and fourth-moment matrices of the reduced-form errors, the asymptotic
//! covariance of the moment vector, and the asymptotic variances of each
//! estimator.  The simulation harness compares Monte-Carlo dispersion
//! against these values.

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2};

use super::ErrorFamily;
use crate::error::{Error, Result};
use crate::matcalc::{a_vec, b_vec, Sym2};
use crate::variance::DeltaParts;

/// Standardized third and fourth moments (mean 0, variance 1) of a shock
/// family.
#[derive(Debug, Clone, Copy)]
pub struct FamilyMoments {
    pub m3: f64,
    pub m4: f64,
}

/// Population skewness and kurtosis of each family, validating the
/// parameters (`df > 4` so the fourth moment exists, `sigma > 0`,
/// `0 < p < 1`).
pub fn family_moments(family: &ErrorFamily) -> Result<FamilyMoments> {
    match *family {
        ErrorFamily::Normal => Ok(FamilyMoments { m3: 0.0, m4: 3.0 }),
        ErrorFamily::ScaledT { df } => {
            if df <= 4.0 {
                return Err(Error::InvalidData(format!(
                    "scaled-t needs df > 4 for a finite fourth moment, got {df}"
                )));
            }
            Ok(FamilyMoments {
                m3: 0.0,
                m4: 3.0 * (df - 2.0) / (df - 4.0),
            })
        }
        ErrorFamily::CenteredLognormal { sigma } => {
            if sigma <= 0.0 {
                return Err(Error::InvalidData(format!(
                    "centered-lognormal needs sigma > 0, got {sigma}"
                )));
            }
            let w = (sigma * sigma).exp();
            Ok(FamilyMoments {
                m3: (w + 2.0) * (w - 1.0).sqrt(),
                m4: w * w * w * w + 2.0 * w * w * w + 3.0 * w * w - 3.0,
            })
        }
        ErrorFamily::TwoPoint { p } => {
            if !(0.0 < p && p < 1.0) {
                return Err(Error::InvalidData(format!(
                    "two-point needs 0 < p < 1, got {p}"
                )));
            }
            Ok(FamilyMoments {
                m3: (1.0 - 2.0 * p) / (p * (1.0 - p)).sqrt(),
                m4: 1.0 / (p * (1.0 - p)) - 3.0,
            })
        }
    }
}

/// Population third-moment matrix of `v = C·u` with iid standardized
/// shocks: entry `[2(i−1)+r, j]` is `E[v_i v_j v_r] = Σ_a C_ia C_ja C_ra
/// m3`.
pub fn psi3_true(c: &Matrix2<f64>, m3: f64) -> Matrix4x2<f64> {
    let mut out = Matrix4x2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for r in 0..2 {
                let mut s = 0.0;
                for a in 0..2 {
                    s += c[(i, a)] * c[(j, a)] * c[(r, a)];
                }
                out[(2 * i + r, j)] = s * m3;
            }
        }
    }
    out
}

/// Population fourth-moment matrix of `v = C·u`: entry
/// `[2(i−1)+r, 2(j−1)+s]` is `E[v_i v_j v_r v_s]`, the Gaussian part plus
/// the excess-kurtosis correction along each shock.
pub fn psi4_true(c: &Matrix2<f64>, m4: f64) -> Matrix4<f64> {
    let om = c * c.transpose();
    let mut out = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for r in 0..2 {
                for s in 0..2 {
                    let mut cum = 0.0;
                    for a in 0..2 {
                        cum += c[(i, a)] * c[(j, a)] * c[(r, a)] * c[(s, a)];
                    }
                    out[(2 * i + r, 2 * j + s)] = cum * (m4 - 3.0)
                        + om[(i, j)] * om[(r, s)]
                        + om[(i, r)] * om[(j, s)]
                        + om[(i, s)] * om[(j, r)];
                }
            }
        }
    }
    out
}

/// All population quantities the variance formulas depend on.
#[derive(Debug, Clone, Copy)]
pub struct TheoryEnv {
    pub beta: f64,
    pub omega: Sym2,
    /// Lower Cholesky factor of `omega` (the mixing matrix of the shocks).
    pub chol: Matrix2<f64>,
    pub xi22: f64,
    pub alpha_k: f64,
    pub alpha_l: f64,
    /// Limiting leverage imbalance of the design.
    pub delta: f64,
    /// Limiting interaction between the first stage and the leverage
    /// imbalance.
    pub mu: f64,
    pub m3: f64,
    pub m4: f64,
}

impl TheoryEnv {
    pub fn tau(&self) -> f64 {
        self.alpha_k * (1.0 - self.alpha_l) / (1.0 - self.alpha_k - self.alpha_l)
    }

    pub fn lambda(&self) -> Result<f64> {
        let a = a_vec(self.beta);
        Ok(self.xi22 * self.omega.inverse()?.quad_form(&a))
    }

    /// Loadings of `(1, −β)·v` on the two shocks.
    fn bc(&self) -> Vector2<f64> {
        self.chol.transpose() * b_vec(self.beta)
    }

    /// Loadings of the part of `v_2` orthogonal to `(1, −β)·v`.
    fn qc(&self) -> Vector2<f64> {
        let b = b_vec(self.beta);
        let bob = self.omega.quad_form(&b);
        let gamma = (self.omega.a12 * b[0] + self.omega.a22 * b[1]) / bob;
        let q = Vector2::new(-gamma * b[0], 1.0 - gamma * b[1]);
        self.chol.transpose() * q
    }

    /// Excess kurtosis of `(1, −β)·v` relative to its variance.
    pub fn kappa(&self) -> f64 {
        let bc = self.bc();
        let bob = self.omega.quad_form(&b_vec(self.beta));
        (bc[0].powi(4) + bc[1].powi(4)) * (self.m4 - 3.0) / (bob * bob)
    }

    /// Covariance inputs at the population values, for an arbitrary
    /// second-moment matrix and interaction vector.
    pub fn delta_parts(&self, xi: Sym2, skew_vec: Vector2<f64>) -> DeltaParts {
        DeltaParts {
            xi,
            omega: self.omega,
            tau: self.tau(),
            alpha_k: self.alpha_k,
            delta: self.delta,
            psi3: psi3_true(&self.chol, self.m3),
            psi4: psi4_true(&self.chol, self.m4),
            skew_vec,
        }
    }
}

/// Asymptotic variance of the likelihood-based estimator under Gaussian
/// errors (or balanced designs).
pub fn v_liml_n(env: &TheoryEnv) -> Result<f64> {
    let a = a_vec(env.beta);
    let b = b_vec(env.beta);
    let bob = env.omega.quad_form(&b);
    let aoa = env.omega.inverse()?.quad_form(&a);
    let lambda = env.xi22 * aoa;
    let correction = env.alpha_k * (1.0 - env.alpha_l)
        / ((1.0 - env.alpha_k - env.alpha_l) * lambda);
    Ok(bob * aoa / lambda * (1.0 + correction))
}

/// Asymptotic variance of the likelihood-based estimator under arbitrary
/// error distributions and leverage imbalance: the Gaussian value plus the
/// skewness and kurtosis corrections.
pub fn v_liml(env: &TheoryEnv) -> Result<f64> {
    let base = v_liml_n(env)?;
    let bc = env.bc();
    let qc = env.qc();
    let xi22sq = env.xi22 * env.xi22;
    // E[(v2 orthogonal to eps) * eps^2]
    let e_qee = (qc[0] * bc[0] * bc[0] + qc[1] * bc[1] * bc[1]) * env.m3;
    // E[eps^2 * (v2 orthogonal to eps)^2] - det(Omega): fourth cumulant
    // only, because the orthogonalized Gaussian part cancels exactly.
    let e_q2e2 = (qc[0] * qc[0] * bc[0] * bc[0] + qc[1] * qc[1] * bc[1] * bc[1])
        * (env.m4 - 3.0);
    Ok(base
        + 2.0 * env.alpha_k.sqrt() * env.mu / xi22sq * e_qee
        + env.alpha_k * env.delta / xi22sq * e_q2e2)
}

/// The numerator of the efficiency correction and its normalizer, shared
/// by the efficient-weight gain and the weight-misspecification penalty.
fn efficiency_pieces(env: &TheoryEnv) -> (f64, f64, f64) {
    let bc = env.bc();
    let qc = env.qc();
    let e_eps3 = (bc[0].powi(3) + bc[1].powi(3)) * env.m3;
    let e_qe3 = (qc[0] * bc[0].powi(3) + qc[1] * bc[1].powi(3)) * (env.m4 - 3.0);
    let num = env.alpha_k.sqrt() * env.mu * e_eps3 + env.alpha_k * env.delta * e_qe3;
    let denom_factor = 2.0 * env.tau() + env.alpha_k * env.delta * env.kappa();
    let bob = env.omega.quad_form(&b_vec(env.beta));
    (num, denom_factor, bob)
}

/// Asymptotic variance of the efficiently weighted minimum-distance
/// estimator: the likelihood-based value minus the (nonnegative) gain from
/// exploiting skewness and kurtosis.
pub fn v_emd(env: &TheoryEnv) -> Result<f64> {
    let vl = v_liml(env)?;
    let (num, denom_factor, bob) = efficiency_pieces(env);
    Ok(vl - num * num / (denom_factor * env.xi22 * env.xi22 * bob * bob))
}

/// Penalty for keeping the default weight when the efficient one differs.
pub fn v_delta(env: &TheoryEnv) -> Result<f64> {
    let (num, denom_factor, bob) = efficiency_pieces(env);
    let b = b_vec(env.beta);
    let gamma_num = env.omega.a12 * b[0] + env.omega.a22 * b[1]; // b'Ωe2
    let gamma = gamma_num / bob;
    let full_num = bob * bob * gamma * denom_factor + num;
    Ok(full_num * full_num / (denom_factor * env.xi22 * env.xi22 * bob * bob))
}

/// Asymptotic variance of the unrestricted estimator: the efficient value,
/// the weight penalty, and the terms that appear only when the rank-one
/// restriction fails (`xi_det = det(Xi) > 0`) or the violating direction
/// interacts with the leverage (`mu_tilde`).
pub fn v_umd(env: &TheoryEnv, xi_det: f64, mu_tilde: f64) -> Result<f64> {
    let b = b_vec(env.beta);
    let bc = env.chol.transpose() * b;
    let e2c = Vector2::new(env.chol[(1, 0)], env.chol[(1, 1)]);
    // E[v2^2 * eps]
    let e_v22e = (bc[0] * e2c[0] * e2c[0] + bc[1] * e2c[1] * e2c[1]) * env.m3;
    let xi22sq = env.xi22 * env.xi22;
    Ok(v_emd(env)?
        + v_delta(env)?
        + (xi_det * env.omega.a22 / env.xi22 + 2.0 * mu_tilde * e_v22e) / xi22sq)
}
