//! Runtime registry of estimation strategies: every estimator, standard
//! error, and overidentification test sits behind a common trait and is
//! selected by name, so configuration and the command line can pick
//! variants without compile-time wiring.

use crate::error::{Error, Result};
use crate::estimators::{self, FitResult};
use crate::overid::{self, TestResult};
use crate::reduce::{DesignDiagnostics, SuffStats};
use crate::variance::{self, DeltaVariant, SEResult};

/// Everything a strategy may consume.  Sufficient statistics are always
/// available; design diagnostics (residuals, leverage imbalance) are only
/// available when the full data or compiled design is at hand, and the
/// strategies that need them report a configuration error otherwise.
pub struct FitInput<'a> {
    pub ss: &'a SuffStats,
    pub dd: Option<&'a DesignDiagnostics>,
}

impl<'a> FitInput<'a> {
    fn diagnostics(&self, who: &str) -> Result<&'a DesignDiagnostics> {
        self.dd.ok_or_else(|| {
            Error::Spec(format!(
                "'{who}' needs design diagnostics (residuals and leverage), \
                 which are unavailable from sufficient statistics alone"
            ))
        })
    }
}

/// A point estimator selectable by name.
pub trait EstimatorStrategy: Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, input: &FitInput) -> Result<FitResult>;
}

/// A standard-error method selectable by name, valid for one estimator.
pub trait SeStrategy: Sync {
    fn name(&self) -> &'static str;
    /// Name of the estimator this method applies to.
    fn estimator(&self) -> &'static str;
    fn compute(&self, input: &FitInput, fit: &FitResult) -> Result<SEResult>;
}

/// An overidentification test selectable by name.
pub trait OveridTestStrategy: Sync {
    fn name(&self) -> &'static str;
    fn run(&self, input: &FitInput, nominal_size: f64) -> Result<TestResult>;
}

struct LimlStrategy;

impl EstimatorStrategy for LimlStrategy {
    fn name(&self) -> &'static str {
        "liml"
    }
    fn fit(&self, input: &FitInput) -> Result<FitResult> {
        estimators::liml_re(input.ss)
    }
}

struct EmdStrategy;

impl EstimatorStrategy for EmdStrategy {
    fn name(&self) -> &'static str {
        "emd"
    }
    fn fit(&self, input: &FitInput) -> Result<FitResult> {
        let dd = input.diagnostics("emd")?;
        let mv = variance::delta_hat(input.ss, dd, DeltaVariant::Restricted)?;
        estimators::emd(input.ss, &mv.delta_hat)
    }
}

struct UmdStrategy;

impl EstimatorStrategy for UmdStrategy {
    fn name(&self) -> &'static str {
        "umd"
    }
    fn fit(&self, input: &FitInput) -> Result<FitResult> {
        estimators::umd(input.ss)
    }
}

struct PsdMixStrategy;

impl EstimatorStrategy for PsdMixStrategy {
    fn name(&self) -> &'static str {
        "psd-mix"
    }
    fn fit(&self, input: &FitInput) -> Result<FitResult> {
        let w = estimators::w_re(input.ss)?;
        estimators::psd_mix(input.ss, &w)
    }
}

struct HessianSe;

impl SeStrategy for HessianSe {
    fn name(&self) -> &'static str {
        "hessian"
    }
    fn estimator(&self) -> &'static str {
        "liml"
    }
    fn compute(&self, input: &FitInput, fit: &FitResult) -> Result<SEResult> {
        variance::se_hessian_re(input.ss, fit)
    }
}

struct SandwichSe;

impl SeStrategy for SandwichSe {
    fn name(&self) -> &'static str {
        "sandwich"
    }
    fn estimator(&self) -> &'static str {
        "liml"
    }
    fn compute(&self, input: &FitInput, fit: &FitResult) -> Result<SEResult> {
        let dd = input.diagnostics("sandwich")?;
        let mv = variance::delta_hat(input.ss, dd, DeltaVariant::Restricted)?;
        variance::se_sandwich_liml(input.ss, fit, &mv)
    }
}

struct EmdSe;

impl SeStrategy for EmdSe {
    fn name(&self) -> &'static str {
        "emd"
    }
    fn estimator(&self) -> &'static str {
        "emd"
    }
    fn compute(&self, input: &FitInput, fit: &FitResult) -> Result<SEResult> {
        let dd = input.diagnostics("emd")?;
        let mv = variance::delta_hat(input.ss, dd, DeltaVariant::Restricted)?;
        variance::se_emd(input.ss, fit, &mv)
    }
}

struct UmdSe;

impl SeStrategy for UmdSe {
    fn name(&self) -> &'static str {
        "umd"
    }
    fn estimator(&self) -> &'static str {
        "umd"
    }
    fn compute(&self, input: &FitInput, fit: &FitResult) -> Result<SEResult> {
        let dd = input.diagnostics("umd")?;
        let mv = variance::delta_hat(input.ss, dd, DeltaVariant::Unrestricted)?;
        variance::se_umd(input.ss, fit, &mv)
    }
}

struct ModifiedCdStrategy;

impl OveridTestStrategy for ModifiedCdStrategy {
    fn name(&self) -> &'static str {
        "modified-cd"
    }
    fn run(&self, input: &FitInput, nominal_size: f64) -> Result<TestResult> {
        let dd = input.diagnostics("modified-cd")?;
        let fit = estimators::liml_re(input.ss)?;
        let pm = variance::psi_moments(dd, input.ss)?;
        let kappa = variance::kappa_hat(fit.beta_hat, &pm.psi4, &input.ss.s);
        overid::modified_cd_test(input.ss, dd.delta_hat, kappa, nominal_size)
    }
}

struct SarganStrategy;

impl OveridTestStrategy for SarganStrategy {
    fn name(&self) -> &'static str {
        "sargan"
    }
    fn run(&self, input: &FitInput, nominal_size: f64) -> Result<TestResult> {
        overid::sargan_test(input.ss, nominal_size)
    }
}

static ESTIMATORS: [&dyn EstimatorStrategy; 4] =
    [&LimlStrategy, &EmdStrategy, &UmdStrategy, &PsdMixStrategy];
static SE_METHODS: [&dyn SeStrategy; 4] = [&HessianSe, &SandwichSe, &EmdSe, &UmdSe];
static TESTS: [&dyn OveridTestStrategy; 2] = [&ModifiedCdStrategy, &SarganStrategy];

/// Looks up an estimator by name.
pub fn estimator(name: &str) -> Option<&'static dyn EstimatorStrategy> {
    ESTIMATORS.iter().copied().find(|e| e.name() == name)
}

/// Looks up a standard-error method by name.
pub fn se_method(name: &str) -> Option<&'static dyn SeStrategy> {
    SE_METHODS.iter().copied().find(|s| s.name() == name)
}

/// Looks up an overidentification test by name.
pub fn overid_test(name: &str) -> Option<&'static dyn OveridTestStrategy> {
    TESTS.iter().copied().find(|t| t.name() == name)
}

/// Registered estimator names, in stable order.
pub fn estimator_names() -> Vec<&'static str> {
    ESTIMATORS.iter().map(|e| e.name()).collect()
}

/// Registered standard-error method names, in stable order.
pub fn se_names() -> Vec<&'static str> {
    SE_METHODS.iter().map(|s| s.name()).collect()
}

/// Registered test names, in stable order.
pub fn test_names() -> Vec<&'static str> {
    TESTS.iter().map(|t| t.name()).collect()
}

/// Standard-error methods valid for the given estimator, in stable order.
pub fn compatible_se_methods(estimator: &str) -> Vec<&'static str> {
    SE_METHODS
        .iter()
        .filter(|s| s.estimator() == estimator)
        .map(|s| s.name())
        .collect()
}

/// The method used when none is requested explicitly.
pub fn default_se_for(estimator: &str) -> Option<&'static str> {
    match estimator {
        "liml" => Some("hessian"),
        "emd" => Some("emd"),
        "umd" => Some("umd"),
        _ => None,
    }
}
