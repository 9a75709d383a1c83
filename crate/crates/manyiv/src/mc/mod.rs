//! Monte-Carlo machinery: data-generating processes with grouped
//! instrument designs, a compiled fast path that draws only the
//! reduced-form errors per replication, and a parallel study runner whose
//! output is bit-identical for any worker count.

pub mod theory;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::matcalc::{a_vec, Sym2};
use crate::reduce::{
    annihilator_sums, factorize, h_diagonal, Dataset, DesignDiagnostics, SuffStats,
};
use crate::registry::{self, FitInput};
use theory::{family_moments, FamilyMoments, TheoryEnv};

/// Distribution of the standardized shocks (mean 0, variance 1).
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorFamily {
    Normal,
    /// Student-t rescaled to unit variance; needs `df > 4`.
    ScaledT { df: f64 },
    /// Shifted and rescaled lognormal (right-skewed).
    CenteredLognormal { sigma: f64 },
    /// Two atoms with probabilities `p` and `1 − p` (maximally skewed for
    /// small `p`).
    TwoPoint { p: f64 },
}

/// Shape of the first-stage coefficient vector (always rescaled so the
/// signal strength matches the requested `lambda`).
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum FirstStagePattern {
    Equal,
    Decaying,
    /// Standard-normal coefficients from a dedicated generator.
    Random { seed: u64 },
}

/// How observations are spread over the K+1 instrument groups.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstrumentDesign {
    /// Sizes as equal as possible (leverage imbalance ~ 0).
    BalancedGroups,
    /// Geometrically decaying sizes (`shape < 1` gives singleton tail
    /// groups and large leverage imbalance).
    SkewedLeverage { shape: f64 },
}

/// Complete description of a data-generating process.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct DGPSpec {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub beta: f64,
    /// Target signal strength; the first stage is rescaled so that
    /// `pi'pi/n · a'Omega^{-1}a` equals it exactly.
    pub lambda: f64,
    pub omega: Sym2,
    pub errors: ErrorFamily,
    pub first_stage: FirstStagePattern,
    pub design: InstrumentDesign,
    /// Squared norm (per observation) of a first-stage component for the
    /// outcome equation orthogonal to the endogenous one, violating the
    /// proportionality restriction; 0 keeps the restriction.  Needs
    /// `K ≥ 3` when positive.
    #[serde(default)]
    pub pr_violation: f64,
}

impl DGPSpec {
    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidData("need at least one instrument".into()));
        }
        if self.n <= self.k + self.l + 2 {
            return Err(Error::InvalidData(format!(
                "n = {} too small for K = {}, L = {}",
                self.n, self.k, self.l
            )));
        }
        if self.n < self.k + 1 {
            return Err(Error::InvalidData(
                "need at least one observation per instrument group".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidData(format!(
                "signal strength {} must be nonnegative",
                self.lambda
            )));
        }
        if !self.omega.is_pd() {
            return Err(Error::InvalidData(
                "error covariance must be positive definite".into(),
            ));
        }
        if self.pr_violation < 0.0 {
            return Err(Error::InvalidData(
                "restriction violation must be nonnegative".into(),
            ));
        }
        if self.pr_violation > 0.0 && self.k < 3 {
            return Err(Error::InvalidData(
                "a restriction violation needs K >= 3 to stay orthogonal \
                 to the first stage and the leverage vector"
                    .into(),
            ));
        }
        if let InstrumentDesign::SkewedLeverage { shape } = self.design {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "leverage shape {shape} must be positive"
                )));
            }
        }
        family_moments(&self.errors).map(|_| ())
    }
}

/// Fills `out` with iid standardized draws from the family.
pub(crate) fn draw_standardized<R: Rng>(family: &ErrorFamily, rng: &mut R, out: &mut [f64]) {
    match *family {
        ErrorFamily::Normal => {
            let d = Normal::new(0.0, 1.0).expect("standard normal");
            for x in out.iter_mut() {
                *x = d.sample(rng);
            }
        }
        ErrorFamily::ScaledT { df } => {
            let d = StudentsT::new(0.0, 1.0, df).expect("validated df");
            let scale = (df / (df - 2.0)).sqrt();
            for x in out.iter_mut() {
                *x = d.sample(rng) / scale;
            }
        }
        ErrorFamily::CenteredLognormal { sigma } => {
            let d = Normal::new(0.0, 1.0).expect("standard normal");
            let mean = (sigma * sigma / 2.0).exp();
            let sd = ((2.0 * sigma * sigma).exp() - (sigma * sigma).exp()).sqrt();
            for x in out.iter_mut() {
                *x = ((sigma * d.sample(rng)).exp() - mean) / sd;
            }
        }
        ErrorFamily::TwoPoint { p } => {
            let hi = ((1.0 - p) / p).sqrt();
            let lo = -(p / (1.0 - p)).sqrt();
            for x in out.iter_mut() {
                *x = if rng.gen::<f64>() < p { hi } else { lo };
            }
        }
    }
}

/// Sizes of the K+1 groups for a design.
fn group_sizes(spec: &DGPSpec) -> Result<Vec<usize>> {
    let g = spec.k + 1;
    match spec.design {
        InstrumentDesign::BalancedGroups => {
            let base = spec.n / g;
            let rem = spec.n % g;
            Ok((0..g).map(|i| base + usize::from(i < rem)).collect())
        }
        InstrumentDesign::SkewedLeverage { shape } => {
            let weights: Vec<f64> = (0..g).map(|i| shape.powi(i as i32)).collect();
            let total: f64 = weights.iter().sum();
            let mut sizes: Vec<usize> = weights
                .iter()
                .map(|w| ((spec.n as f64) * w / total + 0.5).floor().max(1.0) as usize)
                .collect();
            let assigned: usize = sizes.iter().sum();
            let diff = spec.n as i64 - assigned as i64;
            let base = sizes[0] as i64 + diff;
            if base < 1 {
                return Err(Error::InvalidData(format!(
                    "leverage shape {shape} leaves no room for the base group"
                )));
            }
            sizes[0] = base as usize;
            Ok(sizes)
        }
    }
}

/// A compiled design: everything that does not change across
/// replications.  Holds the orthonormalized instrument/covariate bases,
/// the leverage diagnostics of the design, the scaled first stage, and the
/// error mixing matrix.
pub struct Design {
    pub spec: DGPSpec,
    pub master_seed: u64,
    w_raw: DMatrix<f64>,
    z_raw: DMatrix<f64>,
    qw: DMatrix<f64>,
    qz: DMatrix<f64>,
    /// Instrument-basis coordinates of the leverage-imbalance vector.
    q_h: DVector<f64>,
    delta_design: f64,
    sum_mij3: f64,
    sum_mij4: f64,
    sum_mii2: f64,
    pi: DVector<f64>,
    /// Restriction-violating direction (zero when the restriction holds).
    pub beta_z: DVector<f64>,
    /// K×2 projected first stage: `[beta·pi + beta_z, pi]`.
    pi_mat: DMatrix<f64>,
    psi_w: DMatrix<f64>,
    /// Transposed lower Cholesky factor of the error covariance.
    chol_t: DMatrix<f64>,
    chol: Matrix2<f64>,
    fm: FamilyMoments,
    mu: f64,
}

/// Per-replication output of the fast path.
pub struct RepData {
    pub ss: SuffStats,
    pub dd: DesignDiagnostics,
}

impl Design {
    /// Validates the specification and builds every design-level object.
    /// The design stream (stream 0 of the master seed) draws, in order:
    /// the non-intercept covariate columns, the restriction-violating
    /// direction, and the covariate coefficients.
    pub fn compile(spec: &DGPSpec, master_seed: u64) -> Result<Design> {
        spec.validate()?;
        let fm = family_moments(&spec.errors)?;
        let (n, k, l) = (spec.n, spec.k, spec.l);
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(0);

        // Covariates: intercept plus standard-normal columns.
        let mut w_raw = DMatrix::zeros(n, l);
        if l >= 1 {
            w_raw.column_mut(0).fill(1.0);
            for j in 1..l {
                let mut col = vec![0.0; n];
                draw_standardized(&ErrorFamily::Normal, &mut rng, &mut col);
                w_raw.column_mut(j).copy_from_slice(&col);
            }
        }

        // Instruments: group dummies (group 0 is the baseline).
        let sizes = group_sizes(spec)?;
        let mut z_raw = DMatrix::zeros(n, k);
        let mut row = 0usize;
        for (g, &size) in sizes.iter().enumerate() {
            for _ in 0..size {
                if g >= 1 {
                    z_raw[(row, g - 1)] = 1.0;
                }
                row += 1;
            }
        }
        debug_assert_eq!(row, n);

        let ortho = factorize(&w_raw, &z_raw)?;
        let (h, _) = h_diagonal(&ortho.qw, &ortho.qz);
        let delta_design = h.dot(&h) / k as f64;
        let q_h = ortho.qz.transpose() * &h;
        let (sum_mij3, sum_mij4, sum_mii2) = annihilator_sums(&ortho.qw, &ortho.qz);

        // First stage, rescaled so pi'pi = n·lambda/(a'Omega^{-1}a).
        let a = a_vec(spec.beta);
        let aoa = spec.omega.inverse()?.quad_form(&a);
        let mut pi = match spec.first_stage {
            FirstStagePattern::Equal => DVector::from_element(k, 1.0),
            FirstStagePattern::Decaying => {
                DVector::from_fn(k, |i, _| 1.0 / (i as f64 + 1.0))
            }
            FirstStagePattern::Random { seed } => {
                let mut own = ChaCha8Rng::seed_from_u64(seed);
                let mut buf = vec![0.0; k];
                draw_standardized(&ErrorFamily::Normal, &mut own, &mut buf);
                DVector::from_vec(buf)
            }
        };
        if spec.lambda == 0.0 {
            pi.fill(0.0);
        } else {
            let target = (n as f64) * spec.lambda / aoa;
            pi *= (target / pi.norm_squared()).sqrt();
        }

        // Restriction-violating direction: orthogonal to the first stage
        // and to the leverage vector, so the violation moves neither the
        // estimand nor the skew interaction.
        let mut beta_z = DVector::zeros(k);
        if spec.pr_violation > 0.0 {
            let mut buf = vec![0.0; k];
            draw_standardized(&ErrorFamily::Normal, &mut rng, &mut buf);
            let mut raw = DVector::from_vec(buf);
            // Orthonormalize {pi, q_h} first (they need not be orthogonal
            // to each other), then project the raw draw off that span.
            let mut basis: Vec<DVector<f64>> = Vec::new();
            for cand in [&pi, &q_h] {
                let mut v = cand.clone();
                for u in &basis {
                    let coef = v.dot(u);
                    v -= u * coef;
                }
                let norm = v.norm();
                if norm > 1e-12 * cand.norm().max(1.0) {
                    basis.push(v / norm);
                }
            }
            for u in &basis {
                let coef = raw.dot(u);
                raw -= u * coef;
            }
            let norm_sq = raw.norm_squared();
            if norm_sq <= 1e-12 * k as f64 {
                return Err(Error::Numerical(
                    "violating direction degenerated during orthogonalization".into(),
                ));
            }
            beta_z = raw * ((n as f64) * spec.pr_violation / norm_sq).sqrt();
        }

        let mut pi_mat = DMatrix::zeros(k, 2);
        pi_mat.set_column(0, &(&pi * spec.beta + &beta_z));
        pi_mat.set_column(1, &pi);

        // Covariate coefficients (content irrelevant — projected out
        // exactly — but kept nonzero to exercise the residualization).
        let mut psi_buf = vec![0.0; l * 2];
        draw_standardized(&ErrorFamily::Normal, &mut rng, &mut psi_buf);
        let psi_w = DMatrix::from_row_slice(l, 2, &psi_buf);

        let chol = nalgebra::Cholesky::new(spec.omega.to_matrix())
            .ok_or_else(|| Error::Numerical("covariance Cholesky failed".into()))?
            .l();
        let chol_t = DMatrix::from_fn(2, 2, |i, j| chol[(j, i)]);

        let mbar = pi_mat.transpose() * &q_h / n as f64;
        let mu = mbar[1] * ((n as f64) / (k as f64)).sqrt();

        Ok(Design {
            spec: spec.clone(),
            master_seed,
            w_raw,
            z_raw,
            qw: ortho.qw,
            qz: ortho.qz,
            q_h,
            delta_design,
            sum_mij3,
            sum_mij4,
            sum_mii2,
            pi,
            beta_z,
            pi_mat,
            psi_w,
            chol_t,
            chol,
            fm,
            mu,
        })
    }

    /// Population (2,2) entry of the projected second-moment matrix.
    pub fn xi22(&self) -> f64 {
        self.pi.norm_squared() / self.spec.n as f64
    }

    /// Population projected second-moment matrix, including any
    /// restriction violation.
    pub fn xi_true(&self) -> Sym2 {
        let g = self.pi_mat.transpose() * &self.pi_mat / self.spec.n as f64;
        Sym2::new(g[(0, 0)], g[(0, 1)], g[(1, 1)])
    }

    /// Design-level leverage imbalance.
    pub fn delta_design(&self) -> f64 {
        self.delta_design
    }

    /// Population quantities for the closed-form variance formulas.
    pub fn theory_env(&self) -> TheoryEnv {
        TheoryEnv {
            beta: self.spec.beta,
            omega: self.spec.omega,
            chol: self.chol,
            xi22: self.xi22(),
            alpha_k: self.spec.k as f64 / self.spec.n as f64,
            alpha_l: self.spec.l as f64 / self.spec.n as f64,
            delta: self.delta_design,
            mu: self.mu,
            m3: self.fm.m3,
            m4: self.fm.m4,
        }
    }

    fn draw_errors(&self, rep: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(rep as u64 + 1);
        let n = self.spec.n;
        let mut buf = vec![0.0; 2 * n];
        draw_standardized(&self.spec.errors, &mut rng, &mut buf);
        // Row-major: both shocks of observation i are adjacent.
        DMatrix::from_row_slice(n, 2, &buf) * &self.chol_t
    }

    /// Fast path: draws one replication's errors and produces the
    /// sufficient statistics and diagnostics directly, without forming the
    /// raw dataset.
    pub fn replicate(&self, rep: usize) -> Result<RepData> {
        let v = self.draw_errors(rep);
        let n = self.spec.n as f64;
        let nu = (self.spec.n - self.spec.k - self.spec.l) as f64;

        let qz_v = self.qz.transpose() * &v;
        let qw_v = self.qw.transpose() * &v;
        let pi_hat = &self.pi_mat + &qz_v;

        let tg = pi_hat.transpose() * &pi_hat;
        let t = Sym2::new(tg[(0, 0)] / n, tg[(0, 1)] / n, tg[(1, 1)] / n);
        let vv = v.transpose() * &v;
        let zz = qz_v.transpose() * &qz_v;
        let ww = qw_v.transpose() * &qw_v;
        let sg = vv - zz - ww;
        let s = Sym2::new(sg[(0, 0)] / nu, sg[(0, 1)] / nu, sg[(1, 1)] / nu);
        let ss = SuffStats::from_parts(t, s, self.spec.n, self.spec.k, self.spec.l)?;

        let resid = &v - &self.qz * &qz_v - &self.qw * &qw_v;
        let proj = pi_hat.transpose() * &self.q_h;
        let mbar_hat = Vector2::new(proj[0] / n, proj[1] / n);
        let mu_hat = proj[1] / (n * self.spec.k as f64).sqrt();
        let dd = DesignDiagnostics {
            delta_hat: self.delta_design,
            mbar_hat,
            mu_hat,
            sum_mij3: self.sum_mij3,
            sum_mij4: self.sum_mij4,
            sum_mii2: self.sum_mii2,
            resid,
        };
        Ok(RepData { ss, dd })
    }

    /// Slow path: materializes the same replication as a raw dataset (the
    /// reduction of which reproduces the fast path up to rounding).
    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        let v = self.draw_errors(rep);
        let y_mat = &self.qz * &self.pi_mat + &self.qw * &self.psi_w + v;
        Dataset::new(
            y_mat.column(0).into_owned(),
            y_mat.column(1).into_owned(),
            self.z_raw.clone(),
            self.w_raw.clone(),
        )
    }
}

/// Compiles the design and materializes one replication as a dataset.
pub fn generate(spec: &DGPSpec, master_seed: u64, rep: usize) -> Result<Dataset> {
    Design::compile(spec, master_seed)?.dataset(rep)
}

/// What a study measures.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct MCTargets {
    pub estimators: Vec<String>,
    pub tests: Vec<String>,
}

/// A complete study configuration, loadable from JSON.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ExperimentSpec {
    pub spec: DGPSpec,
    pub reps: usize,
    pub master_seed: u64,
    pub targets: MCTargets,
    pub nominal_size: f64,
}

/// Design-level constants echoed into the report.
#[derive(Serialize, Debug)]
pub struct DesignSummary {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub lambda: f64,
    pub beta: f64,
    pub xi22: f64,
    pub xi_det: f64,
    pub delta_hat: f64,
    pub mu: f64,
    pub tau: f64,
}

/// Sampling performance of one estimator.
#[derive(Serialize, Debug)]
pub struct EstimatorSummary {
    pub name: String,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub failures: usize,
    pub boundary_count: usize,
}

/// Coverage of one standard-error method.
#[derive(Serialize, Debug)]
pub struct SeSummary {
    pub name: String,
    pub estimator: String,
    pub mean_se: f64,
    pub coverage95: f64,
    pub failures: usize,
}

/// Rejection rate of one test.
#[derive(Serialize, Debug)]
pub struct TestSummary {
    pub name: String,
    pub rejection_rate: f64,
    pub failures: usize,
}

/// Full study output.
#[derive(Serialize, Debug)]
pub struct MCReport {
    pub reps: usize,
    pub master_seed: u64,
    pub nominal_size: f64,
    pub design: DesignSummary,
    pub estimators: Vec<EstimatorSummary>,
    pub se_methods: Vec<SeSummary>,
    pub tests: Vec<TestSummary>,
}

struct RepRecord {
    beta: Vec<Option<f64>>,
    boundary: Vec<bool>,
    se: Vec<Option<f64>>,
    reject: Vec<Option<bool>>,
}

impl RepRecord {
    fn all_failed(n_est: usize, n_se: usize, n_tests: usize) -> RepRecord {
        RepRecord {
            beta: vec![None; n_est],
            boundary: vec![false; n_est],
            se: vec![None; n_se],
            reject: vec![None; n_tests],
        }
    }
}

fn is_boundary(flags: &[String]) -> bool {
    flags
        .iter()
        .any(|f| f == "boundary" || f == "lambda_boundary" || f == "xi22_negative")
}

/// Runs the study: replications in parallel (each with its own counter
/// stream), aggregation sequential in replication order, so the report is
/// bit-identical for any number of worker threads.
pub fn run_mc(cfg: &ExperimentSpec) -> Result<MCReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidData("need at least one replication".into()));
    }
    if !(0.0 < cfg.nominal_size && cfg.nominal_size < 1.0) {
        return Err(Error::InvalidData(format!(
            "nominal size {} outside (0, 1)",
            cfg.nominal_size
        )));
    }
    let design = Design::compile(&cfg.spec, cfg.master_seed)?;

    let ests = cfg
        .targets
        .estimators
        .iter()
        .map(|n| {
            registry::estimator(n).ok_or_else(|| Error::Spec(format!("unknown estimator '{n}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let tests = cfg
        .targets
        .tests
        .iter()
        .map(|n| {
            registry::overid_test(n).ok_or_else(|| Error::Spec(format!("unknown test '{n}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let se_plan: Vec<(usize, &dyn registry::SeStrategy)> = ests
        .iter()
        .enumerate()
        .flat_map(|(i, e)| {
            registry::compatible_se_methods(e.name())
                .into_iter()
                .map(move |m| (i, registry::se_method(m).expect("registered method")))
        })
        .collect();

    let records: Vec<RepRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| match design.replicate(rep) {
            Err(_) => RepRecord::all_failed(ests.len(), se_plan.len(), tests.len()),
            Ok(rd) => {
                let input = FitInput {
                    ss: &rd.ss,
                    dd: Some(&rd.dd),
                };
                let fits: Vec<Option<crate::estimators::FitResult>> =
                    ests.iter().map(|e| e.fit(&input).ok()).collect();
                RepRecord {
                    se: se_plan
                        .iter()
                        .map(|(i, s)| {
                            fits[*i]
                                .as_ref()
                                .and_then(|f| s.compute(&input, f).ok().map(|r| r.se))
                        })
                        .collect(),
                    reject: tests
                        .iter()
                        .map(|t| t.run(&input, cfg.nominal_size).ok().map(|r| r.reject))
                        .collect(),
                    boundary: fits
                        .iter()
                        .map(|f| f.as_ref().is_some_and(|x| is_boundary(&x.flags)))
                        .collect(),
                    beta: fits.iter().map(|f| f.as_ref().map(|x| x.beta_hat)).collect(),
                }
            }
        })
        .collect();

    let beta0 = cfg.spec.beta;
    let z975 = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.975);

    let estimators = ests
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut sum = 0.0;
            let mut sum_err_sq = 0.0;
            let mut count = 0usize;
            let mut boundary_count = 0usize;
            for r in &records {
                if let Some(b) = r.beta[i] {
                    sum += b;
                    sum_err_sq += (b - beta0) * (b - beta0);
                    count += 1;
                }
                boundary_count += usize::from(r.boundary[i]);
            }
            let mean = sum / count as f64;
            let mut ss_dev = 0.0;
            for r in &records {
                if let Some(b) = r.beta[i] {
                    ss_dev += (b - mean) * (b - mean);
                }
            }
            EstimatorSummary {
                name: e.name().to_string(),
                mean,
                bias: mean - beta0,
                sd: (ss_dev / (count.max(2) - 1) as f64).sqrt(),
                rmse: (sum_err_sq / count as f64).sqrt(),
                failures: cfg.reps - count,
                boundary_count,
            }
        })
        .collect();

    let se_methods = se_plan
        .iter()
        .enumerate()
        .map(|(slot, (i, s))| {
            let mut sum_se = 0.0;
            let mut covered = 0usize;
            let mut count = 0usize;
            for r in &records {
                if let (Some(b), Some(se)) = (r.beta[*i], r.se[slot]) {
                    sum_se += se;
                    covered += usize::from((b - beta0).abs() <= z975 * se);
                    count += 1;
                }
            }
            SeSummary {
                name: s.name().to_string(),
                estimator: ests[*i].name().to_string(),
                mean_se: sum_se / count as f64,
                coverage95: covered as f64 / count as f64,
                failures: cfg.reps - count,
            }
        })
        .collect();

    let test_summaries = tests
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let mut rejections = 0usize;
            let mut count = 0usize;
            for r in &records {
                if let Some(rej) = r.reject[j] {
                    rejections += usize::from(rej);
                    count += 1;
                }
            }
            TestSummary {
                name: t.name().to_string(),
                rejection_rate: rejections as f64 / count as f64,
                failures: cfg.reps - count,
            }
        })
        .collect();

    let env = design.theory_env();
    Ok(MCReport {
        reps: cfg.reps,
        master_seed: cfg.master_seed,
        nominal_size: cfg.nominal_size,
        design: DesignSummary {
            n: cfg.spec.n,
            k: cfg.spec.k,
            l: cfg.spec.l,
            lambda: cfg.spec.lambda,
            beta: beta0,
            xi22: design.xi22(),
            xi_det: design.xi_true().det(),
            delta_hat: design.delta_design,
            mu: design.mu,
            tau: env.tau(),
        },
        estimators,
        se_methods,
        tests: test_summaries,
    })
}
