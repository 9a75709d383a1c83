//! JSON documents with a stable field order and a fixed float policy.
//!
//! Every number in an output document is rounded to 12 significant decimal
//! digits before serialization, so output bytes do not depend on last-ulp
//! differences across platforms, optimization levels, or thread counts.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use manyiv::estimators::FitResult;
use manyiv::matcalc::Sym2;
use manyiv::overid::TestResult;
use manyiv::reduce::{DesignDiagnostics, SuffStats};
use manyiv::variance::SEResult;
use serde_json::{json, Map, Value};

use crate::Failure;

/// 0.975 quantile of the standard normal distribution.
pub const Z975: f64 = 1.959963984540054;

/// Rounds to 12 significant decimal digits; normalizes -0.0 to 0.0 and
/// passes non-finite values through (they serialize as null).
pub fn sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().expect("scientific notation round-trips")
}

/// Applies [`sig12`] to every floating-point number in a JSON tree.
/// Integer-typed numbers (counts, seeds) are left untouched.
pub fn round_tree(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("checked is_f64");
            *v = match serde_json::Number::from_f64(sig12(x)) {
                Some(rounded) => Value::Number(rounded),
                None => Value::Null,
            };
        }
        Value::Array(items) => items.iter_mut().for_each(round_tree),
        Value::Object(fields) => fields.values_mut().for_each(round_tree),
        _ => {}
    }
}

fn mat2(a: &Sym2) -> Value {
    json!([[a.a11, a.a12], [a.a12, a.a22]])
}

/// Report for `fit`: point estimate, inference, and the quantities the
/// estimate was built from.
pub fn fit_document(ss: &SuffStats, fit: &FitResult, se: Option<&SEResult>) -> Value {
    let mut doc = Map::new();
    doc.insert("beta_hat".into(), json!(fit.beta_hat));
    doc.insert("se".into(), json!(se.map(|s| s.se)));
    doc.insert(
        "ci95".into(),
        match se {
            Some(s) => json!([fit.beta_hat - Z975 * s.se, fit.beta_hat + Z975 * s.se]),
            None => Value::Null,
        },
    );
    doc.insert("estimator".into(), json!(fit.kind.name()));
    doc.insert("lambda_hat".into(), json!(fit.lambda_hat));
    doc.insert("Omega_hat".into(), mat2(&fit.omega_hat));
    doc.insert("Xi22_hat".into(), json!(fit.xi22_hat));
    if let Some(xi) = &fit.xi_hat {
        doc.insert("Xi_hat".into(), mat2(xi));
    }
    doc.insert("m_min".into(), json!(ss.m_min));
    doc.insert("m_max".into(), json!(ss.m_max));
    doc.insert("K".into(), json!(ss.k));
    doc.insert("L".into(), json!(ss.l));
    doc.insert("n".into(), json!(ss.n));
    doc.insert("flags".into(), json!(fit.flags));
    let mut doc = Value::Object(doc);
    round_tree(&mut doc);
    doc
}

fn test_entry(t: &TestResult) -> Value {
    json!({
        "statistic": t.statistic,
        "critical_value": t.critical_value,
        "p_value": t.p_value,
        "nominal_size": t.nominal_size,
        "adjusted_level": t.adjusted_level,
        "reject": t.reject,
    })
}

/// Report for `test`: the bare minimum-distance criterion value plus both
/// calibrated tests.
pub fn test_document(ss: &SuffStats, j_md: f64, cd: &TestResult, sargan: &TestResult) -> Value {
    let mut doc = json!({
        "j_md": j_md,
        "modified_cd": test_entry(cd),
        "sargan": test_entry(sargan),
        "K": ss.k,
        "L": ss.l,
        "n": ss.n,
    });
    round_tree(&mut doc);
    doc
}

/// Report for `diagnose`: dimension ratios, eigenvalues, signal strength,
/// and leverage imbalance.
pub fn diagnose_document(ss: &SuffStats, dd: &DesignDiagnostics) -> Value {
    let lambda_hat = (ss.m_max - ss.alpha_k()).max(0.0);
    let mut doc = json!({
        "n": ss.n,
        "K": ss.k,
        "L": ss.l,
        "k_over_n": ss.alpha_k(),
        "l_over_n": ss.alpha_l(),
        "m_min": ss.m_min,
        "m_max": ss.m_max,
        "lambda_hat": lambda_hat,
        "delta_hat": dd.delta_hat,
        "mu_hat": dd.mu_hat,
    });
    round_tree(&mut doc);
    doc
}

/// Pretty-prints a document to the given file, or to stdout when no path
/// is set.  Output always ends with a newline.
pub fn write_json(doc: &Value, output: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(doc).expect("documents hold no non-string keys");
    text.push('\n');
    match output {
        Some(path) => fs::write(path, &text)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::data(format!("cannot write to stdout: {e}"))),
    }
}
