//! Data reduction: orthogonalization, sufficient statistics, and design
//! diagnostics.
//!
//! The estimators in this crate depend on the raw data only through two 2x2
//! matrices: the projected cross-product `T` and the residual covariance
//! estimate `S`.  This module ingests a [`Dataset`] in raw form, builds an
//! orthonormal instrument basis that is orthogonal to the exogenous
//! regressors, and computes `T`, `S`, and the leverage-based diagnostics
//! (delta_hat, mu_hat, mbar_hat, annihilator power sums) that feed the
//! higher-moment variance corrections and the overidentification test.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::matcalc::{gen_eigs_2x2, Sym2};

/// Raw input data: outcome, endogenous regressor, exogenous regressors, and
/// raw (not yet orthogonalized) instruments.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Outcome, length n.
    pub y: DVector<f64>,
    /// Endogenous regressor, length n.
    pub x: DVector<f64>,
    /// Exogenous regressors including any intercept column, n x L (L may be 0).
    pub w: DMatrix<f64>,
    /// Raw instruments, n x K.
    pub z: DMatrix<f64>,
}

impl Dataset {
    /// Validates dimensions and finiteness.
    ///
    /// Requires at least one instrument and `n > K + L + 2` so the residual
    /// covariance has positive degrees of freedom.  Rank of (W, Z) is
    /// checked later, during factorization.
    pub fn new(
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        w: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.nrows() != n || (w.ncols() > 0 && w.nrows() != n) {
            return Err(Error::InvalidData(format!(
                "inconsistent lengths: y has {n} rows, x {}, z {}, w {}",
                x.len(),
                z.nrows(),
                w.nrows()
            )));
        }
        let k = z.ncols();
        let l = w.ncols();
        if k == 0 {
            return Err(Error::InvalidData("at least one instrument required".into()));
        }
        if n <= k + l + 2 {
            return Err(Error::InvalidData(format!(
                "n = {n} must exceed K + L + 2 = {}",
                k + l + 2
            )));
        }
        for (name, v) in [("y", &y), ("x", &x)] {
            if v.iter().any(|e| !e.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite value in {name}")));
            }
        }
        if z.iter().any(|e| !e.is_finite()) || w.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidData("non-finite value in z or w".into()));
        }
        Ok(Dataset { y, x, w, z })
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Sufficient statistics: everything the estimators need from the data.
#[derive(Debug, Clone)]
pub struct SuffStats {
    /// Projected cross-product `Pi_hat' Pi_hat / n`, positive semi-definite.
    pub t: Sym2,
    /// Residual covariance estimate, positive definite.
    pub s: Sym2,
    /// Observations.
    pub n: usize,
    /// Instruments.
    pub k: usize,
    /// Exogenous regressors.
    pub l: usize,
    /// Smaller eigenvalue of `S^{-1} T`.
    pub m_min: f64,
    /// Larger eigenvalue of `S^{-1} T`.
    pub m_max: f64,
}

impl SuffStats {
    /// Builds the statistics from already-computed `T` and `S`, running the
    /// eigensolver.  Useful for tests and synthetic inputs.
    pub fn from_parts(t: Sym2, s: Sym2, n: usize, k: usize, l: usize) -> Result<Self> {
        if !s.is_pd() {
            return Err(Error::DegenerateS(format!(
                "S has determinant {:.3e}",
                s.det()
            )));
        }
        let eigs = gen_eigs_2x2(&s, &t)?;
        Ok(SuffStats { t, s, n, k, l, m_min: eigs.m_min, m_max: eigs.m_max })
    }

    /// K/n.
    pub fn alpha_k(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// L/n.
    pub fn alpha_l(&self) -> f64 {
        self.l as f64 / self.n as f64
    }

    /// Residual degrees of freedom n − K − L.
    pub fn nu(&self) -> usize {
        self.n - self.k - self.l
    }

    /// The variance-inflation constant (K/n)(1 − L/n)/(1 − K/n − L/n).
    pub fn tau(&self) -> f64 {
        let (ak, al) = (self.alpha_k(), self.alpha_l());
        ak * (1.0 - al) / (1.0 - ak - al)
    }
}

/// Leverage diagnostics and annihilator power sums.
///
/// With `M = I − ZZ' − W(W'W)⁻¹W'` (the annihilator of instruments and
/// exogenous regressors) and `H = ZZ' − (K/(n−K−L))·M`, these quantities
/// normalize the third/fourth-moment estimators and measure how far the
/// design is from balanced leverage.
#[derive(Debug, Clone)]
pub struct DesignDiagnostics {
    /// `diag(H)'diag(H)/K`, zero for perfectly balanced designs.
    pub delta_hat: f64,
    /// `Pi_hat' Z' diag(H) / n`.
    pub mbar_hat: Vector2<f64>,
    /// Second component of `Pi_hat' Z' diag(H) / sqrt(nK)`.
    pub mu_hat: f64,
    /// Sum of all cubed entries of M.
    pub sum_mij3: f64,
    /// Sum of all fourth-power entries of M.
    pub sum_mij4: f64,
    /// Sum of squared diagonal entries of M.
    pub sum_mii2: f64,
    /// Residuals `MY`, n x 2.
    pub resid: DMatrix<f64>,
}

/// Options for the dense diagnostics computation.
#[derive(Debug, Clone)]
pub struct DiagOptions {
    /// Maximum n for which the O(n^2) annihilator sums are attempted.
    pub n_cap: usize,
}

impl Default for DiagOptions {
    fn default() -> Self {
        DiagOptions { n_cap: 20_000 }
    }
}

/// Orthonormal bases produced by the combined factorization.
pub(crate) struct Ortho {
    /// Basis of the exogenous-regressor span, n x L.
    pub qw: DMatrix<f64>,
    /// Basis of the residualized instrument span, n x K.
    pub qz: DMatrix<f64>,
}

/// QR-factorizes (W, Z) jointly so the instrument block comes out both
/// orthonormal and orthogonal to the exogenous regressors.
pub(crate) fn factorize(w: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Ortho> {
    let n = z.nrows();
    let l = w.ncols();
    let k = z.ncols();

    let mut c = DMatrix::<f64>::zeros(n, l + k);
    c.columns_mut(0, l).copy_from(w);
    c.columns_mut(l, k).copy_from(z);
    let col_norms: Vec<f64> = (0..l + k).map(|j| c.column(j).norm()).collect();

    let qr = c.qr();
    let q = qr.q();
    let r = qr.r();
    for j in 0..l + k {
        // A vanishing R diagonal relative to the column's own scale means
        // column j is linearly dependent on the columns before it.
        if r[(j, j)].abs() <= 1e-10 * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient { column: j });
        }
    }

    Ok(Ortho {
        qw: q.columns(0, l).into_owned(),
        qz: q.columns(l, k).into_owned(),
    })
}

/// Returns the orthonormalized instruments and the orthonormal basis of the
/// exogenous-regressor span: `Z'Z = I_K` and `W'Z = 0`.
pub fn orthogonalize(d: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let o = factorize(&d.w, &d.z)?;
    Ok((o.qz, o.qw))
}

/// Outcome matrix Y = (y, x), n x 2.
fn outcome_matrix(d: &Dataset) -> DMatrix<f64> {
    let n = d.n();
    let mut y = DMatrix::<f64>::zeros(n, 2);
    y.column_mut(0).copy_from(&d.y);
    y.column_mut(1).copy_from(&d.x);
    y
}

/// Intermediate per-dataset quantities shared by the statistics and the
/// diagnostics.
struct Projections {
    pi_hat: DMatrix<f64>, // K x 2
    resid: DMatrix<f64>,  // n x 2
    t: Sym2,
    s: Sym2,
}

fn project(d: &Dataset, o: &Ortho) -> Result<Projections> {
    let n = d.n() as f64;
    let nu = (d.n() - d.z.ncols() - d.w.ncols()) as f64;
    let y = outcome_matrix(d);

    let pi_hat = o.qz.transpose() * &y;
    let wy = o.qw.transpose() * &y;
    let resid = &y - &o.qz * &pi_hat - &o.qw * &wy;

    let t = Sym2::from_matrix(&((pi_hat.transpose() * &pi_hat / n).fixed_view::<2, 2>(0, 0)).into_owned());
    let s_raw = resid.transpose() * &resid / nu;
    let s = Sym2::from_matrix(&s_raw.fixed_view::<2, 2>(0, 0).into_owned());
    if !s.is_pd() || s.det() <= 1e-12 * s.norm_sq() {
        return Err(Error::DegenerateS(format!(
            "residual covariance determinant {:.3e} (are y and x collinear?)",
            s.det()
        )));
    }
    Ok(Projections { pi_hat, resid, t, s })
}

/// Computes the sufficient statistics `T`, `S`, and the eigenvalues of
/// `S^{-1} T`.
pub fn suff_stats(d: &Dataset) -> Result<SuffStats> {
    let o = factorize(&d.w, &d.z)?;
    let p = project(d, &o)?;
    SuffStats::from_parts(p.t, p.s, d.n(), d.z.ncols(), d.w.ncols())
}

/// Per-row leverages and the diagonal of H.
///
/// `(ZZ')_ii` is the squared norm of row i of the orthonormal instrument
/// basis; `M_ii = 1 − (ZZ')_ii − (WW-projection)_ii`.
pub(crate) fn h_diagonal(qw: &DMatrix<f64>, qz: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = qz.nrows();
    let k = qz.ncols();
    let l = qw.ncols();
    let ratio = k as f64 / (n - k - l) as f64;
    let mut m_diag = DVector::<f64>::zeros(n);
    let mut h = DVector::<f64>::zeros(n);
    for i in 0..n {
        let pz = qz.row(i).norm_squared();
        let pw = if l > 0 { qw.row(i).norm_squared() } else { 0.0 };
        let mii = 1.0 - pz - pw;
        m_diag[i] = mii;
        h[i] = pz - ratio * mii;
    }
    (h, m_diag)
}

/// Annihilator power sums computed blockwise over rows of M.
///
/// The summation order is fixed (blocks in order, rows in order, entries in
/// order), so the result is bit-identical from run to run.
pub(crate) fn annihilator_sums(
    qw: &DMatrix<f64>,
    qz: &DMatrix<f64>,
) -> (f64, f64, f64) {
    let n = qz.nrows();
    let block = 512usize;
    let mut sum3 = 0.0f64;
    let mut sum4 = 0.0f64;
    let mut sum_d2 = 0.0f64;
    for b0 in (0..n).step_by(block) {
        let rows = block.min(n - b0);
        // M rows b0..b0+rows: identity slice minus both projections.
        let mut m = -(qz.rows(b0, rows) * qz.transpose());
        if qw.ncols() > 0 {
            m -= qw.rows(b0, rows) * qw.transpose();
        }
        for i in 0..rows {
            m[(i, b0 + i)] += 1.0;
        }
        for i in 0..rows {
            let d = m[(i, b0 + i)];
            sum_d2 += d * d;
            let row = m.row(i);
            for j in 0..n {
                let e = row[j];
                let e2 = e * e;
                sum3 += e2 * e;
                sum4 += e2 * e2;
            }
        }
    }
    (sum3, sum4, sum_d2)
}

/// Assembles the diagnostics given the orthonormal bases and projections.
pub(crate) fn diagnostics_from_parts(
    qw: &DMatrix<f64>,
    qz: &DMatrix<f64>,
    pi_hat: &DMatrix<f64>,
    resid: DMatrix<f64>,
    sums: (f64, f64, f64),
) -> DesignDiagnostics {
    let n = qz.nrows();
    let k = qz.ncols();
    let (h, _) = h_diagonal(qw, qz);
    let delta_hat = h.dot(&h) / k as f64;
    let qh = qz.transpose() * &h; // K-vector Z' diag(H)
    let m = pi_hat.transpose() * &qh; // 2-vector
    let mbar_hat = Vector2::new(m[0] / n as f64, m[1] / n as f64);
    let mu_hat = m[1] / ((n as f64) * (k as f64)).sqrt();
    DesignDiagnostics {
        delta_hat,
        mbar_hat,
        mu_hat,
        sum_mij3: sums.0,
        sum_mij4: sums.1,
        sum_mii2: sums.2,
        resid,
    }
}

/// Computes the design diagnostics, including the O(n^2) annihilator power
/// sums.
///
/// # Errors
///
/// Returns [`Error::TooLarge`] when `n` exceeds `opts.n_cap` — the power
/// sums materialize n-row blocks against all n columns of M.
pub fn design_diagnostics(d: &Dataset, opts: &DiagOptions) -> Result<DesignDiagnostics> {
    Ok(reduce_all(d, opts)?.1)
}

/// One-pass computation of both the sufficient statistics and the design
/// diagnostics, sharing the factorization.
pub fn reduce_all(d: &Dataset, opts: &DiagOptions) -> Result<(SuffStats, DesignDiagnostics)> {
    if d.n() > opts.n_cap {
        return Err(Error::TooLarge { n: d.n(), cap: opts.n_cap });
    }
    let o = factorize(&d.w, &d.z)?;
    let p = project(d, &o)?;
    let ss = SuffStats::from_parts(p.t, p.s, d.n(), d.z.ncols(), d.w.ncols())?;
    let sums = annihilator_sums(&o.qw, &o.qz);
    let dd = diagnostics_from_parts(&o.qw, &o.qz, &p.pi_hat, p.resid, sums);
    Ok((ss, dd))
}
