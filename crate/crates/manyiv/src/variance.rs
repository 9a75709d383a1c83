//! Variance estimation: higher-moment estimators, the asymptotic
//! covariance of the moment vector `vech(T − (K/n)S)`, and the standard
//! errors for each estimator.
//!
//! The covariance assembly ([`assemble_delta`]) is shared between the
//! plug-in estimate ([`delta_hat`]) and the closed-form oracle used by the
//! simulation module, which evaluates it at the true data-generating
//! parameters.

use nalgebra::{Matrix3, Matrix3x2, Matrix4, Matrix4x2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::estimators::{liml_re, FitResult};
use crate::matcalc::{a_vec, b_vec, q_s, CalcMats, Sym2};
use crate::reduce::{DesignDiagnostics, SuffStats};

/// Third- and fourth-moment estimates of the reduced-form errors.
///
/// Index conventions (1-based, column-major): `psi3[2(i−1)+r, j]`
/// estimates `E[v_i v_j v_r]` and `psi4[2(i−1)+r, 2(j−1)+s]` estimates
/// `E[v_i v_j v_r v_s]`.
pub struct PsiMoments {
    pub psi3: Matrix4x2<f64>,
    pub psi4: Matrix4<f64>,
}

/// Estimates the third- and fourth-moment matrices from the residuals,
/// normalizing by the cubed and fourth-power annihilator sums.  The
/// fourth-moment estimate removes the Gaussian-structure contamination
/// using `S` as the covariance plug-in.
pub fn psi_moments(dd: &DesignDiagnostics, ss: &SuffStats) -> Result<PsiMoments> {
    let n = ss.n as f64;
    if dd.sum_mij3.abs() <= 1e-10 * n {
        return Err(Error::DegenerateDesign(
            "cubed annihilator sum too small for third-moment estimation".into(),
        ));
    }
    if dd.sum_mij4 <= 1e-10 * n {
        return Err(Error::DegenerateDesign(
            "fourth-power annihilator sum too small for fourth-moment estimation".into(),
        ));
    }
    let mut s3 = Matrix4x2::zeros();
    let mut s4 = Matrix4::zeros();
    for i in 0..dd.resid.nrows() {
        let v = Vector2::new(dd.resid[(i, 0)], dd.resid[(i, 1)]);
        let vv = v * v.transpose();
        s3 += vv.kronecker(&v);
        s4 += vv.kronecker(&vv);
    }
    let cm = CalcMats::new();
    let om = ss.s.to_matrix();
    let vec_om = ss.s.vec4();
    let gaussian = 2.0 * cm.n2 * om.kronecker(&om) + vec_om * vec_om.transpose();
    Ok(PsiMoments {
        psi3: s3 / dd.sum_mij3,
        psi4: (s4 - (dd.sum_mii2 - dd.sum_mij4) * gaussian) / dd.sum_mij4,
    })
}

/// Excess kurtosis of the residual combination `(1, −beta)·v`, normalized
/// by its variance and floored at −2 (the smallest value any distribution
/// can attain).
pub fn kappa_hat(beta: f64, psi4: &Matrix4<f64>, omega: &Sym2) -> f64 {
    let b = b_vec(beta);
    let bb = b.kronecker(&b);
    let num = (bb.transpose() * psi4 * bb)[(0, 0)];
    let bob = omega.quad_form(&b);
    (num / (bob * bob) - 3.0).max(-2.0)
}

/// Inputs to the moment-vector covariance: the second-moment matrix of the
/// projected coefficients, the error covariance, the design constants, and
/// the higher moments.  `skew_vec` is the vector multiplying the
/// third-moment block (the estimated or theoretical interaction between
/// the leverage imbalance and the coefficients).
pub struct DeltaParts {
    pub xi: Sym2,
    pub omega: Sym2,
    pub tau: f64,
    pub alpha_k: f64,
    pub delta: f64,
    pub psi3: Matrix4x2<f64>,
    pub psi4: Matrix4<f64>,
    pub skew_vec: Vector2<f64>,
}

/// Assembles the asymptotic covariance of `√n·vech(T − (K/n)S − Ξ)` from
/// its three pieces: the Gaussian-equivalent part, the excess-kurtosis
/// part scaled by the leverage imbalance, and the symmetrized skewness
/// part.  Returns the total and the three components separately.
pub fn assemble_delta(p: &DeltaParts) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let cm = CalcMats::new();
    let xi = p.xi.to_matrix();
    let om = p.omega.to_matrix();

    let d1_inner = xi.kronecker(&om) + om.kronecker(&xi) + p.tau * om.kronecker(&om);
    let d1 = 2.0 * cm.n2 * d1_inner;

    let vec_om = p.omega.vec4();
    let d2_inner = p.psi4 - vec_om * vec_om.transpose() - 2.0 * cm.n2 * om.kronecker(&om);
    let d2 = p.alpha_k * p.delta * d2_inner;

    let d3_half = 2.0 * cm.n2 * p.psi3.transpose().kronecker(&p.skew_vec);
    let d3 = d3_half + d3_half.transpose();

    let to_vech = |m: Matrix4<f64>| cm.l2 * m * cm.l2.transpose();
    let comps = [to_vech(d1), to_vech(d2), to_vech(d3)];
    (comps[0] + comps[1] + comps[2], comps)
}

/// Projects a symmetric matrix onto the positive semi-definite cone by
/// flooring its eigenvalues at `1e-10·trace/3`.  Returns the (possibly
/// unchanged) matrix and whether flooring occurred.
pub(crate) fn floor_psd(m: &Matrix3<f64>) -> (Matrix3<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let floor = 1e-10 * eig.eigenvalues.sum().max(0.0) / 3.0;
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return (*m, false);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = eig.eigenvectors * Matrix3::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (rebuilt, true)
}

/// Which second-moment matrix the covariance plug-in assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaVariant {
    /// Rank-one `Xi = Xi22·aa'` at the likelihood-based estimates, with
    /// the skewness interaction projected on the same direction.
    Restricted,
    /// Full `Xi = T − (K/n)S` and the raw estimated interaction vector.
    Unrestricted,
}

/// Estimated covariance of the moment vector plus the higher-moment
/// estimates that went into it.
pub struct MomentVariance {
    pub psi3_hat: Matrix4x2<f64>,
    pub psi4_hat: Matrix4<f64>,
    pub delta_hat: Matrix3<f64>,
    /// Gaussian-equivalent, kurtosis, and skewness components (before
    /// flooring; they sum to the unfloored total).
    pub delta_components: [Matrix3<f64>; 3],
    /// True when eigenvalue flooring was needed to make the total PSD.
    pub regularized: bool,
}

/// Plug-in estimate of the moment-vector covariance.  All second-moment
/// plug-ins use `S`; the projected-coefficient block depends on the
/// variant.
pub fn delta_hat(
    ss: &SuffStats,
    dd: &DesignDiagnostics,
    variant: DeltaVariant,
) -> Result<MomentVariance> {
    let pm = psi_moments(dd, ss)?;
    let (xi, skew_vec) = match variant {
        DeltaVariant::Restricted => {
            let fit = liml_re(ss)?;
            let a = a_vec(fit.beta_hat);
            // The interaction vector collapses to (second component)·a
            // under the rank-one restriction.
            (Sym2::outer(&a).scale(fit.xi22_hat), dd.mbar_hat[1] * a)
        }
        DeltaVariant::Unrestricted => (ss.t.axpy(-ss.alpha_k(), ss.s), dd.mbar_hat),
    };
    let parts = DeltaParts {
        xi,
        omega: ss.s,
        tau: ss.tau(),
        alpha_k: ss.alpha_k(),
        delta: dd.delta_hat,
        psi3: pm.psi3,
        psi4: pm.psi4,
        skew_vec,
    };
    let (raw, comps) = assemble_delta(&parts);
    let (floored, regularized) = floor_psd(&raw);
    Ok(MomentVariance {
        psi3_hat: pm.psi3,
        psi4_hat: pm.psi4,
        delta_hat: floored,
        delta_components: comps,
        regularized,
    })
}

/// How a standard error was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeMethod {
    HessianRe,
    SandwichLiml,
    Emd,
    Umd,
}

impl SeMethod {
    /// Stable name used in configuration and output.
    pub fn name(self) -> &'static str {
        match self {
            SeMethod::HessianRe => "hessian",
            SeMethod::SandwichLiml => "sandwich",
            SeMethod::Emd => "emd",
            SeMethod::Umd => "umd",
        }
    }
}

/// A standard error together with the normalized variance it came from:
/// `variance_n` estimates the variance of `√n·(β̂ − β)`, and
/// `se = √(variance_n/n)`.
pub struct SEResult {
    pub variance_n: f64,
    pub se: f64,
    pub method: SeMethod,
}

fn finish(variance_n: f64, n: usize, method: SeMethod) -> Result<SEResult> {
    if !(variance_n.is_finite() && variance_n > 0.0) {
        return Err(Error::Numerical(format!(
            "non-positive variance estimate {variance_n} from {}",
            method.name()
        )));
    }
    Ok(SEResult {
        variance_n,
        se: (variance_n / n as f64).sqrt(),
        method,
    })
}

/// Inverse-Hessian standard error for the likelihood-based estimator,
/// using the closed form of the profiled information.  Requires an
/// interior signal-strength estimate.
pub fn se_hessian_re(ss: &SuffStats, fit: &FitResult) -> Result<SEResult> {
    if fit.lambda_hat <= 0.0 {
        return Err(Error::WeakInstruments);
    }
    let n = ss.n as f64;
    let kn = ss.alpha_k();
    let ln = ss.alpha_l();
    let lam = fit.lambda_hat;
    let om = fit.omega_hat;
    let b = b_vec(fit.beta_hat);
    let a = a_vec(fit.beta_hat);
    let bob = om.quad_form(&b);
    let qs = q_s(fit.beta_hat, &ss.t, &om);
    let aoa = om.inverse()?.quad_form(&a);
    let c = lam * qs / ((kn + lam) * (1.0 - ln));
    let inner = qs * om.a22 - ss.t.a22 + (c / (1.0 - c)) * qs / aoa;
    let h11 = bob * (lam + kn) / (n * lam) / inner;
    finish(-n * h11, ss.n, SeMethod::HessianRe)
}

/// Jacobian of the rank-one moment model `Xi22·(β², β, 1)'` with respect
/// to `(β, Xi22)`.
fn model_jacobian(beta: f64, xi22: f64) -> Matrix3x2<f64> {
    Matrix3x2::new(
        2.0 * beta * xi22,
        beta * beta,
        xi22,
        beta,
        0.0,
        1.0,
    )
}

/// The general minimum-distance sandwich `(G'WG)⁻¹G'WΔWG(G'WG)⁻¹`,
/// returning its (1,1) element.  With `W = Δ⁻¹` this collapses to
/// `(G'Δ⁻¹G)⁻¹`.
fn sandwich_var(g: &Matrix3x2<f64>, w: &Matrix3<f64>, delta: &Matrix3<f64>) -> Result<f64> {
    let gwg = g.transpose() * w * g;
    let gwg_inv = gwg.try_inverse().ok_or(Error::WeakInstruments)?;
    let v = gwg_inv * (g.transpose() * w * delta * w * g) * gwg_inv;
    Ok(v[(0, 0)])
}

/// Misspecification-robust sandwich standard error for the
/// likelihood-based estimator: default weight built from its covariance
/// estimate, Jacobian at its own point estimates.
pub fn se_sandwich_liml(ss: &SuffStats, fit: &FitResult, mv: &MomentVariance) -> Result<SEResult> {
    if fit.xi22_hat <= 0.0 {
        return Err(Error::WeakInstruments);
    }
    let oi = fit.omega_hat.inverse()?.to_matrix();
    let cm = CalcMats::new();
    let w = cm.d2.transpose() * oi.kronecker(&oi) * cm.d2;
    let g = model_jacobian(fit.beta_hat, fit.xi22_hat);
    finish(
        sandwich_var(&g, &w, &mv.delta_hat)?,
        ss.n,
        SeMethod::SandwichLiml,
    )
}

/// Standard error for the efficiently weighted minimum-distance estimator:
/// `(G'Δ̂⁻¹G)⁻¹` at its own point estimates.
pub fn se_emd(ss: &SuffStats, fit: &FitResult, mv: &MomentVariance) -> Result<SEResult> {
    if fit.xi22_hat <= 0.0 {
        return Err(Error::WeakInstruments);
    }
    let w = mv
        .delta_hat
        .cholesky()
        .ok_or_else(|| Error::Unidentified("moment covariance is not positive definite".into()))?
        .inverse();
    let g = model_jacobian(fit.beta_hat, fit.xi22_hat);
    let gwg = g.transpose() * w * g;
    let v = gwg.try_inverse().ok_or(Error::WeakInstruments)?;
    finish(v[(0, 0)], ss.n, SeMethod::Emd)
}

/// Delta-method standard error for the unrestricted estimator: the ratio
/// `Xi12/Xi22` differentiated through the moment vector, with the
/// unrestricted covariance.
pub fn se_umd(ss: &SuffStats, fit: &FitResult, mv: &MomentVariance) -> Result<SEResult> {
    let xi = fit
        .xi_hat
        .ok_or_else(|| Error::Spec("unrestricted fit with Xi_hat required".into()))?;
    if xi.a22 <= 0.0 {
        return Err(Error::WeakInstruments);
    }
    let grad = Vector3::new(0.0, 1.0 / xi.a22, -fit.beta_hat / xi.a22);
    let variance_n = (grad.transpose() * mv.delta_hat * grad)[(0, 0)];
    finish(variance_n, ss.n, SeMethod::Umd)
}
