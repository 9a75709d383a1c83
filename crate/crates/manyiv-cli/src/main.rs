//! `manyiv` — instrumental-variables estimation at the command line.
//!
//! Four subcommands share one pipeline: `fit` estimates the structural
//! coefficient on a CSV dataset, `test` runs the overidentification tests,
//! `diagnose` reports design diagnostics, and `simulate` executes a Monte
//! Carlo experiment described by a JSON spec file.
//!
//! Exit codes: 0 on success, 2 for data/configuration problems (unreadable
//! or non-numeric input, unknown columns, invalid option combinations,
//! malformed spec files), 3 when a well-posed estimation or test fails
//! (unidentified estimate, zero signal strength, non-convergence).

mod ingest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use manyiv::mc::{run_mc, ExperimentSpec};
use manyiv::reduce::{self, Dataset, DesignDiagnostics, DiagOptions, SuffStats};
use manyiv::registry::{self, FitInput};
use manyiv::{overid, Error};

/// Failure channel for all subcommands: either a usage/data problem
/// detected by the front end, or an error from the library mapped to an
/// exit code by kind.
#[derive(Debug)]
pub enum Failure {
    Data(String),
    Lib(Error),
}

impl Failure {
    fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Data(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Lib(e) => match e {
                Error::DegenerateS(_)
                | Error::RankDeficient { .. }
                | Error::TooLarge { .. }
                | Error::InvalidData(_)
                | Error::Spec(_) => 2,
                Error::Unidentified(_)
                | Error::WeakInstruments
                | Error::DegenerateDesign(_)
                | Error::NoConvergence { .. }
                | Error::JustIdentified
                | Error::Numerical(_) => 3,
            },
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

#[derive(Parser)]
#[command(
    name = "manyiv",
    version,
    about = "Many-instrument IV estimation, specification tests, and Monte Carlo experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the structural coefficient on a CSV dataset
    Fit(FitArgs),
    /// Run the overidentification tests on a CSV dataset
    Test(TestArgs),
    /// Run a Monte Carlo experiment from a JSON spec file
    Simulate(SimulateArgs),
    /// Report dimension ratios, eigenvalues, and leverage diagnostics
    Diagnose(DiagnoseArgs),
}

/// Dataset location and column roles, shared by `fit`, `test`, and
/// `diagnose`.
#[derive(Args)]
struct DataArgs {
    /// Input CSV file with a header row
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Outcome column name
    #[arg(long, value_name = "COL")]
    outcome: String,

    /// Endogenous regressor column name
    #[arg(long, value_name = "COL")]
    endogenous: String,

    /// Instrument column names (comma-separated and/or repeated)
    #[arg(
        long,
        value_name = "COLS",
        value_delimiter = ',',
        conflicts_with = "instrument_prefix",
        required_unless_present = "instrument_prefix"
    )]
    instruments: Vec<String>,

    /// Treat every column whose name starts with this prefix as an instrument
    #[arg(long, value_name = "PREFIX")]
    instrument_prefix: Option<String>,

    /// Exogenous regressor column names (comma-separated and/or repeated)
    #[arg(long, value_name = "COLS", value_delimiter = ',', conflicts_with = "exogenous_prefix")]
    exogenous: Vec<String>,

    /// Treat every column whose name starts with this prefix as exogenous
    #[arg(long, value_name = "PREFIX")]
    exogenous_prefix: Option<String>,

    /// Do not append an intercept to the exogenous regressors
    #[arg(long)]
    no_intercept: bool,

    /// Run the O(n^2) leverage diagnostics even above the built-in size cap
    #[arg(long)]
    force_large_n: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Estimator: liml, emd, umd, or psd-mix
    #[arg(long, default_value = "liml")]
    estimator: String,

    /// Standard-error method (defaults to the estimator's own method)
    #[arg(long, value_name = "METHOD")]
    se: Option<String>,

    /// Write the JSON report here instead of stdout
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Nominal test size
    #[arg(long, default_value_t = 0.05)]
    size: f64,

    /// Write the JSON report here instead of stdout
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment spec file (JSON)
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Override the spec's master seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the spec's replication count
    #[arg(long)]
    reps: Option<usize>,

    /// Write the JSON report here instead of stdout
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Write the JSON report here instead of stdout
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

/// Caps internal parallelism at `MANYIV_THREADS` worker threads when the
/// variable is set.  Only `simulate` parallelizes, but the pool is global,
/// so it is configured before any subcommand runs.
fn configure_threads() -> Result<(), Failure> {
    let raw = match std::env::var("MANYIV_THREADS") {
        Ok(raw) => raw,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(Failure::data(format!("cannot read MANYIV_THREADS: {e}"))),
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| {
            Failure::data(format!("MANYIV_THREADS must be a positive integer, got '{raw}'"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::data(format!("cannot configure the thread pool: {e}")))
}

fn load(data: &DataArgs) -> Result<Dataset, Failure> {
    let roles = ingest::Roles {
        outcome: &data.outcome,
        endogenous: &data.endogenous,
        instruments: &data.instruments,
        instrument_prefix: data.instrument_prefix.as_deref(),
        exogenous: &data.exogenous,
        exogenous_prefix: data.exogenous_prefix.as_deref(),
        intercept: !data.no_intercept,
    };
    ingest::load_dataset(&data.input, &roles)
}

/// Reduces a dataset to sufficient statistics, computing the O(n^2)
/// design diagnostics only when some selected method consumes them.
fn reduce_input(
    d: &Dataset,
    needs_diagnostics: bool,
    force_large_n: bool,
) -> Result<(SuffStats, Option<DesignDiagnostics>), Failure> {
    if needs_diagnostics {
        let opts = DiagOptions {
            n_cap: if force_large_n { usize::MAX } else { DiagOptions::default().n_cap },
        };
        let (ss, dd) = reduce::reduce_all(d, &opts)?;
        Ok((ss, Some(dd)))
    } else {
        Ok((reduce::suff_stats(d)?, None))
    }
}

/// Validates the estimator/SE combination and returns the method to use,
/// falling back to the estimator's default when none was requested.
fn resolve_se(estimator: &str, requested: Option<&str>) -> Result<Option<&'static str>, Failure> {
    let valid = registry::compatible_se_methods(estimator);
    let Some(requested) = requested else {
        return Ok(registry::default_se_for(estimator));
    };
    if registry::se_method(requested).is_none() {
        return Err(Failure::data(format!(
            "unknown standard-error method '{requested}'; available: {}",
            registry::se_names().join(", ")
        )));
    }
    match valid.iter().find(|v| **v == requested) {
        Some(&name) => Ok(Some(name)),
        None if valid.is_empty() => Err(Failure::data(format!(
            "estimator '{estimator}' has no applicable standard-error method"
        ))),
        None => Err(Failure::data(format!(
            "standard-error method '{requested}' does not apply to estimator '{estimator}'; \
             valid: {}",
            valid.join(", ")
        ))),
    }
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let est = registry::estimator(&args.estimator).ok_or_else(|| {
        Failure::data(format!(
            "unknown estimator '{}'; available: {}",
            args.estimator,
            registry::estimator_names().join(", ")
        ))
    })?;
    let se_name = resolve_se(est.name(), args.se.as_deref())?;
    let needs_diagnostics =
        est.name() == "emd" || matches!(se_name, Some("sandwich") | Some("emd") | Some("umd"));

    let d = load(&args.data)?;
    let (ss, dd) = reduce_input(&d, needs_diagnostics, args.data.force_large_n)?;
    let input = FitInput { ss: &ss, dd: dd.as_ref() };

    let fit = est.fit(&input)?;
    let se = match se_name {
        Some(name) => {
            let method = registry::se_method(name).expect("validated above");
            Some(method.compute(&input, &fit)?)
        }
        None => None,
    };
    report::write_json(&report::fit_document(&ss, &fit, se.as_ref()), args.output.as_deref())
}

fn cmd_test(args: &TestArgs) -> Result<(), Failure> {
    let d = load(&args.data)?;
    let (ss, dd) = reduce_input(&d, true, args.data.force_large_n)?;
    let input = FitInput { ss: &ss, dd: dd.as_ref() };

    let j_md = overid::j_md(&ss);
    let cd = registry::overid_test("modified-cd")
        .expect("registered")
        .run(&input, args.size)?;
    let sargan = registry::overid_test("sargan").expect("registered").run(&input, args.size)?;
    report::write_json(&report::test_document(&ss, j_md, &cd, &sargan), args.output.as_deref())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", args.input.display())))?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| {
        Failure::data(format!("invalid experiment spec {}: {e}", args.input.display()))
    })?;
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    if let Some(reps) = args.reps {
        spec.reps = reps;
    }

    let mc_report = run_mc(&spec)?;
    let mut doc = serde_json::to_value(&mc_report).expect("report serializes");
    report::round_tree(&mut doc);
    report::write_json(&doc, args.output.as_deref())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let d = load(&args.data)?;
    let (ss, dd) = reduce_input(&d, true, args.data.force_large_n)?;
    let dd = dd.expect("diagnostics requested");
    report::write_json(&report::diagnose_document(&ss, &dd), args.output.as_deref())
}
