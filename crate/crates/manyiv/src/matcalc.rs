//! Small-matrix calculus for 2x2 symmetric matrices.
//!
//! Everything downstream of the data reduction works with a pair of 2x2
//! symmetric matrices, so this module provides:
//!
//! - [`Sym2`], a compact value type for symmetric 2x2 matrices;
//! - half-vectorization (`vech`) and full vectorization helpers;
//! - the duplication / elimination / symmetrizer / commutation matrices
//!   ([`CalcMats`]) that translate between the two;
//! - a closed-form generalized eigensolver for the pencil (T, S)
//!   ([`gen_eigs_2x2`]);
//! - quadratic-form ratios ([`q_s`], [`q_t`]) and the algebraic identity
//!   checks ([`identities_check`]) used to validate them.

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric 2x2 matrix stored as its three free entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    /// Builds a symmetric matrix from its free entries.
    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Sym2 { a11, a12, a22 }
    }

    /// The 2x2 identity.
    pub fn identity() -> Self {
        Sym2::new(1.0, 0.0, 1.0)
    }

    /// Symmetrizes a dense 2x2 matrix (averaging the off-diagonal entries).
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Sym2::new(m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)])
    }

    /// Expands to a dense 2x2 matrix.
    pub fn to_matrix(self) -> Matrix2<f64> {
        Matrix2::new(self.a11, self.a12, self.a12, self.a22)
    }

    /// Determinant.
    pub fn det(self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Trace.
    pub fn trace(self) -> f64 {
        self.a11 + self.a22
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(self) -> f64 {
        self.a11 * self.a11 + 2.0 * self.a12 * self.a12 + self.a22 * self.a22
    }

    /// True when both leading principal minors are strictly positive.
    pub fn is_pd(self) -> bool {
        self.a11 > 0.0 && self.det() > 0.0
    }

    /// Inverse, or an error when the determinant is numerically zero
    /// relative to the matrix scale.
    pub fn inverse(self) -> Result<Sym2> {
        let det = self.det();
        // Written as a negated `>` so a NaN determinant also lands in the
        // error branch.
        let well_conditioned = det.abs() > 1e-14 * self.norm_sq().max(f64::MIN_POSITIVE);
        if !well_conditioned {
            return Err(Error::DegenerateS(format!(
                "determinant {det:.3e} vanishes relative to scale"
            )));
        }
        Ok(Sym2::new(self.a22 / det, -self.a12 / det, self.a11 / det))
    }

    /// Quadratic form v' A v.
    pub fn quad_form(self, v: &Vector2<f64>) -> f64 {
        self.a11 * v.x * v.x + 2.0 * self.a12 * v.x * v.y + self.a22 * v.y * v.y
    }

    /// Half-vectorization (a11, a12, a22).
    pub fn vech(self) -> Vector3<f64> {
        Vector3::new(self.a11, self.a12, self.a22)
    }

    /// Column-major full vectorization (a11, a21, a12, a22).
    pub fn vec4(self) -> Vector4<f64> {
        Vector4::new(self.a11, self.a12, self.a12, self.a22)
    }

    /// Rank-one symmetric matrix v v'.
    pub fn outer(v: &Vector2<f64>) -> Sym2 {
        Sym2::new(v.x * v.x, v.x * v.y, v.y * v.y)
    }

    /// Entrywise linear combination `self + c * other`.
    pub fn axpy(self, c: f64, other: Sym2) -> Sym2 {
        Sym2::new(
            self.a11 + c * other.a11,
            self.a12 + c * other.a12,
            self.a22 + c * other.a22,
        )
    }

    /// Scalar multiple.
    pub fn scale(self, c: f64) -> Sym2 {
        Sym2::new(c * self.a11, c * self.a12, c * self.a22)
    }
}

impl std::ops::Add for Sym2 {
    type Output = Sym2;
    fn add(self, rhs: Sym2) -> Sym2 {
        self.axpy(1.0, rhs)
    }
}

impl std::ops::Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, rhs: Sym2) -> Sym2 {
        self.axpy(-1.0, rhs)
    }
}

/// Rebuilds a symmetric matrix from its half-vectorization.
pub fn unvech(v: &Vector3<f64>) -> Sym2 {
    Sym2::new(v.x, v.y, v.z)
}

/// The coefficient vector a = (beta, 1)'.
pub fn a_vec(beta: f64) -> Vector2<f64> {
    Vector2::new(beta, 1.0)
}

/// The coefficient vector b = (1, -beta)'.
pub fn b_vec(beta: f64) -> Vector2<f64> {
    Vector2::new(1.0, -beta)
}

/// Duplication, elimination, symmetrizer, and commutation matrices for the
/// 2x2 case.  They satisfy `l2 * d2 = I3`, `k22 * d2 = d2`,
/// `d2 * l2 * n2 = n2`, and `n2 * n2 = n2`.
#[derive(Debug, Clone)]
pub struct CalcMats {
    /// Duplication: vech(A) -> vec(A) for symmetric A (4x3).
    pub d2: SMatrix<f64, 4, 3>,
    /// Elimination: vec(A) -> vech(A) (3x4).
    pub l2: SMatrix<f64, 3, 4>,
    /// Symmetrizer (I4 + K22) / 2 (4x4).
    pub n2: Matrix4<f64>,
    /// Commutation: vec(A) -> vec(A') (4x4).
    pub k22: Matrix4<f64>,
}

impl CalcMats {
    /// Constructs the four constant matrices.
    pub fn new() -> Self {
        #[rustfmt::skip]
        let d2 = SMatrix::<f64, 4, 3>::from_row_slice(&[
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ]);
        #[rustfmt::skip]
        let l2 = SMatrix::<f64, 3, 4>::from_row_slice(&[
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]);
        #[rustfmt::skip]
        let k22 = Matrix4::from_row_slice(&[
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]);
        let n2 = (Matrix4::identity() + k22) * 0.5;
        CalcMats { d2, l2, n2, k22 }
    }
}

impl Default for CalcMats {
    fn default() -> Self {
        CalcMats::new()
    }
}

/// Result of the 2x2 generalized eigenproblem `T psi = m S psi`.
#[derive(Debug, Clone, Copy)]
pub struct GenEigs {
    /// Smaller eigenvalue of S^{-1} T.
    pub m_min: f64,
    /// Larger eigenvalue of S^{-1} T.
    pub m_max: f64,
    /// Eigenvector for `m_max`, normalized so its second coordinate is 1
    /// (first coordinate 1 when the second vanishes).
    pub psi_max: Vector2<f64>,
}

/// Solves the 2x2 generalized eigenproblem for the pencil (T, S).
///
/// The eigenvalues are the roots of `det(T - m S) = 0`, computed with the
/// numerically stable quadratic formula (the larger-magnitude root first,
/// the other recovered from the product of roots).  For symmetric S > 0 and
/// symmetric T the roots are real; a slightly negative discriminant from
/// rounding is clamped to zero.
///
/// # Errors
///
/// Returns [`Error::DegenerateS`] when `det(S)` is not positive relative to
/// the scale of S.
pub fn gen_eigs_2x2(s: &Sym2, t: &Sym2) -> Result<GenEigs> {
    let det_s = s.det();
    // Negated `>` so a NaN determinant also lands in the error branch.
    let well_conditioned = det_s > 1e-12 * s.norm_sq().max(f64::MIN_POSITIVE);
    if !well_conditioned || s.a11 <= 0.0 {
        return Err(Error::DegenerateS(format!(
            "det(S) = {det_s:.3e} relative to squared norm {:.3e}",
            s.norm_sq()
        )));
    }

    // det(T - mS) = det(S) m^2 - (t11 s22 + t22 s11 - 2 t12 s12) m + det(T).
    let a = det_s;
    let b = -(t.a11 * s.a22 + t.a22 * s.a11 - 2.0 * t.a12 * s.a12);
    let c = t.det();

    let mut disc = b * b - 4.0 * a * c;
    let scale = (b * b).max((4.0 * a * c).abs()).max(f64::MIN_POSITIVE);
    if disc < 0.0 {
        debug_assert!(
            disc > -1e-12 * scale,
            "discriminant {disc:.3e} negative beyond rounding (scale {scale:.3e})"
        );
        disc = 0.0;
    }
    let sqrt_disc = disc.sqrt();

    // q has the same sign as -b and carries the addition that cannot cancel.
    let q = -0.5 * (b + b.signum() * sqrt_disc);
    let r1 = q / a;
    let r2 = if q != 0.0 { c / q } else { 0.0 };
    let (m_min, m_max) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };

    // Eigenvector from the null space of C = T - m_max S: each row of C is
    // orthogonal to psi, so rotate whichever row is larger.
    let c11 = t.a11 - m_max * s.a11;
    let c12 = t.a12 - m_max * s.a12;
    let c22 = t.a22 - m_max * s.a22;
    let cand1 = Vector2::new(-c12, c11);
    let cand2 = Vector2::new(c22, -c12);
    let raw = if cand1.norm() >= cand2.norm() { cand1 } else { cand2 };
    let psi_max = if raw.y.abs() > 1e-14 * raw.norm().max(f64::MIN_POSITIVE) {
        raw / raw.y
    } else if raw.x.abs() > 0.0 {
        raw / raw.x
    } else {
        // T - m_max S vanished entirely (tied eigenvalues): any direction works.
        Vector2::new(0.0, 1.0)
    };

    Ok(GenEigs { m_min, m_max, psi_max })
}

/// Quadratic-form ratio `b' T b / (b' Omega b)` with b = (1, -beta)'.
pub fn q_s(beta: f64, t: &Sym2, omega: &Sym2) -> f64 {
    let b = b_vec(beta);
    t.quad_form(&b) / omega.quad_form(&b)
}

/// Quadratic-form ratio `a' Omega^{-1} T Omega^{-1} a / (a' Omega^{-1} a)`
/// with a = (beta, 1)'.
pub fn q_t(beta: f64, t: &Sym2, omega: &Sym2) -> Result<f64> {
    let oi = omega.inverse()?;
    let oia = oi.to_matrix() * a_vec(beta);
    Ok(t.quad_form(&oia) / oi.quad_form(&a_vec(beta)))
}

/// Residuals of three closed-form identities, reported relative to the
/// magnitude of the quantities involved.
#[derive(Debug, Clone, Copy)]
pub struct IdentityReport {
    /// `Q_S + Q_T - tr(Omega^{-1} T)`, relative.
    pub moment_split: f64,
    /// `det(Omega) a'Omega^{-1}a - b'Omega b`, relative.
    pub adjugate: f64,
    /// `det(nT + vS) - (n^2 m_max m_min + v^2 + n v tr(S^{-1}T)) det(S)`,
    /// maximized over a few (n, v) pairs, relative.
    pub pencil_det: f64,
    /// Largest of the three.
    pub max_abs: f64,
}

/// Evaluates the three identities linking quadratic-form ratios,
/// determinants, and the eigenvalues of the pencil (T, Omega).
///
/// All residuals are zero in exact arithmetic for any symmetric positive
/// definite `omega`, symmetric `t`, and real `beta`.
pub fn identities_check(omega: &Sym2, t: &Sym2, beta: f64) -> Result<IdentityReport> {
    let oi = omega.inverse()?;
    let a = a_vec(beta);
    let b = b_vec(beta);

    let tr_oit = oi.a11 * t.a11 + 2.0 * oi.a12 * t.a12 + oi.a22 * t.a22;
    let qs = q_s(beta, t, omega);
    let qt = q_t(beta, t, omega)?;
    let moment_split = (qs + qt - tr_oit).abs() / (1.0 + tr_oit.abs());

    let lhs = omega.det() * oi.quad_form(&a);
    let rhs = omega.quad_form(&b);
    let adjugate = (lhs - rhs).abs() / (1.0 + rhs.abs());

    let eigs = gen_eigs_2x2(omega, t)?;
    let det_s = omega.det();
    let mut pencil_det = 0.0f64;
    for &(n, v) in &[(1.0, 1.0), (7.0, 3.0), (100.0, 13.0)] {
        let m = t.scale(n).axpy(v, *omega);
        let lhs = m.det();
        let rhs = (n * n * eigs.m_max * eigs.m_min + v * v + n * v * tr_oit) * det_s;
        let rel = (lhs - rhs).abs() / (1.0 + rhs.abs());
        pencil_det = pencil_det.max(rel);
    }

    let max_abs = moment_split.max(adjugate).max(pencil_det);
    Ok(IdentityReport { moment_split, adjugate, pencil_det, max_abs })
}
