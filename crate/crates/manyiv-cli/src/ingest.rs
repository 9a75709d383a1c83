//! CSV ingestion: column-role resolution and strict numeric validation.
//!
//! Every cell of the file must parse as a finite number; missing,
//! malformed, or non-finite cells are rejected with their row and column
//! rather than imputed.

use std::io::Read;
use std::path::Path;

use manyiv::reduce::Dataset;
use nalgebra::{DMatrix, DVector};

use crate::Failure;

/// Column-role assignment for one dataset.
///
/// Instruments and exogenous regressors are selected either by explicit
/// name lists or by a shared name prefix (mutually exclusive per role;
/// the argument parser enforces that).
pub struct Roles<'a> {
    pub outcome: &'a str,
    pub endogenous: &'a str,
    pub instruments: &'a [String],
    pub instrument_prefix: Option<&'a str>,
    pub exogenous: &'a [String],
    pub exogenous_prefix: Option<&'a str>,
    /// Append a constant column to the exogenous block.
    pub intercept: bool,
}

/// Reads a CSV file with a header row into a [`Dataset`].
pub fn load_dataset(path: &Path, roles: &Roles) -> Result<Dataset, Failure> {
    let rdr = builder()
        .from_path(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    from_csv(rdr, roles)
}

fn builder() -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.has_headers(true).trim(csv::Trim::All);
    b
}

fn from_csv<R: Read>(mut rdr: csv::Reader<R>, roles: &Roles) -> Result<Dataset, Failure> {
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::data(format!("cannot read the CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();

    let outcome = find_unique(&header, roles.outcome)?;
    let endogenous = find_unique(&header, roles.endogenous)?;
    let instruments = select(&header, roles.instruments, roles.instrument_prefix, "instrument")?;
    if instruments.is_empty() {
        return Err(Failure::data(
            "no instrument columns selected; pass --instruments or --instrument-prefix",
        ));
    }
    let exogenous = select(&header, roles.exogenous, roles.exogenous_prefix, "exogenous")?;

    let mut claimed: Vec<Option<&str>> = vec![None; header.len()];
    claim(&mut claimed, &header, outcome, "outcome")?;
    claim(&mut claimed, &header, endogenous, "endogenous")?;
    for &j in &instruments {
        claim(&mut claimed, &header, j, "instrument")?;
    }
    for &j in &exogenous {
        claim(&mut claimed, &header, j, "exogenous")?;
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record =
            record.map_err(|e| Failure::data(format!("CSV error at data row {}: {e}", i + 1)))?;
        let mut row = Vec::with_capacity(header.len());
        for (j, field) in record.iter().enumerate() {
            let name = header.get(j).map(String::as_str).unwrap_or("?");
            if field.is_empty() {
                return Err(Failure::data(format!(
                    "missing value at data row {}, column '{}'",
                    i + 1,
                    name
                )));
            }
            let value: f64 = field.parse().map_err(|_| {
                Failure::data(format!(
                    "non-numeric value '{}' at data row {}, column '{}'",
                    field,
                    i + 1,
                    name
                ))
            })?;
            if !value.is_finite() {
                return Err(Failure::data(format!(
                    "non-finite value '{}' at data row {}, column '{}'",
                    field,
                    i + 1,
                    name
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Failure::data("the CSV has a header but no data rows"));
    }

    let column = |j: usize| DVector::from_iterator(n, rows.iter().map(|r| r[j]));
    let y = column(outcome);
    let x = column(endogenous);
    let z_cols: Vec<DVector<f64>> = instruments.iter().map(|&j| column(j)).collect();
    let z = DMatrix::from_columns(&z_cols);

    let mut w_cols: Vec<DVector<f64>> = Vec::new();
    if roles.intercept {
        w_cols.push(DVector::from_element(n, 1.0));
    }
    for &j in &exogenous {
        w_cols.push(column(j));
    }
    let w = if w_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&w_cols)
    };

    Dataset::new(y, x, z, w).map_err(Failure::Lib)
}

/// Index of the single header column named `name`.
fn find_unique(header: &[String], name: &str) -> Result<usize, Failure> {
    let hits: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() == name)
        .map(|(j, _)| j)
        .collect();
    match hits.len() {
        0 => Err(Failure::data(format!("column '{name}' not found in the header"))),
        1 => Ok(hits[0]),
        m => Err(Failure::data(format!("column '{name}' appears {m} times in the header"))),
    }
}

/// Column indices for one role: the explicit list if given, otherwise all
/// header columns sharing the prefix (in header order), otherwise none.
fn select(
    header: &[String],
    explicit: &[String],
    prefix: Option<&str>,
    role: &str,
) -> Result<Vec<usize>, Failure> {
    if !explicit.is_empty() {
        return explicit.iter().map(|name| find_unique(header, name)).collect();
    }
    if let Some(p) = prefix {
        let hits: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(p))
            .map(|(j, _)| j)
            .collect();
        if hits.is_empty() {
            return Err(Failure::data(format!(
                "no header column starts with the {role} prefix '{p}'"
            )));
        }
        return Ok(hits);
    }
    Ok(Vec::new())
}

fn claim<'a>(
    claimed: &mut [Option<&'a str>],
    header: &[String],
    j: usize,
    role: &'a str,
) -> Result<(), Failure> {
    match claimed[j] {
        Some(prev) if prev == role => Err(Failure::data(format!(
            "column '{}' is selected twice for the {role} role",
            header[j]
        ))),
        Some(prev) => Err(Failure::data(format!(
            "column '{}' is assigned to both the {prev} and the {role} role",
            header[j]
        ))),
        None => {
            claimed[j] = Some(role);
            Ok(())
        }
    }
}
