//! Result files: CSV for plot-ready tables, structured text for reports.
//!
//! Every file carries the schema version — a `schema_version` column on each
//! CSV row, a top-level `schema_version` key in reports — so consumers can
//! re-parse emitted files against the version they were written under.
//! Floats use shortest round-trip formatting; timestamps live in a separate
//! `[meta]` table that deterministic mode omits entirely.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use taugas::verify::ResidualReport;

use crate::CliError;

/// Version stamped into every emitted (and accepted) file.
pub const SCHEMA_VERSION: u32 = 1;

/// One CSV cell.
pub enum Cell {
    Uint(u64),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Uint(v) => v.to_string(),
            Cell::Int(v) => v.to_string(),
            // LowerExp is shortest round-trip, like Display, but keeps very
            // small magnitudes compact.
            Cell::Float(v) => format!("{v:e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A named CSV table; the writer prepends the schema-version column.
pub struct Table {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

/// Write `<dir>/<name>.csv` and return its path.
pub fn write_table(dir: &Path, table: &Table) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{}.csv", table.name));
    let fail = |e: &dyn std::fmt::Display| {
        CliError::io(&format!("writing {}", path.display()), e)
    };
    let mut writer = csv::Writer::from_path(&path).map_err(|e| fail(&e))?;
    let mut header = vec!["schema_version"];
    header.extend_from_slice(table.columns);
    writer.write_record(&header).map_err(|e| fail(&e))?;
    for row in &table.rows {
        debug_assert_eq!(row.len(), table.columns.len());
        let mut record = vec![SCHEMA_VERSION.to_string()];
        record.extend(row.iter().map(Cell::render));
        writer.write_record(&record).map_err(|e| fail(&e))?;
    }
    writer.flush().map_err(|e| fail(&e))?;
    Ok(path)
}

/// Write `<dir>/<name>.toml` from any serializable report and return its
/// path. Report structs list scalar fields first and tables last, as the
/// text format requires.
pub fn write_report<R: Serialize>(dir: &Path, name: &str, report: &R) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{name}.toml"));
    let text = toml::to_string_pretty(report)
        .map_err(|e| CliError::config(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(&path, text)
        .map_err(|e| CliError::io(&format!("writing {}", path.display()), &e))?;
    Ok(path)
}

/// Timestamp table for reports; `None` in deterministic mode so identical
/// config and seed give byte-identical files.
#[derive(Debug, Serialize)]
pub struct Meta {
    pub timestamp_unix_s: u64,
}

pub fn meta(deterministic: bool) -> Option<Meta> {
    if deterministic {
        return None;
    }
    let timestamp_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Some(Meta { timestamp_unix_s })
}

/// One verification check: the gated quantity `value` against `threshold`,
/// plus the underlying residual report it came from.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    /// The quantity the threshold applies to (a relative residual, an
    /// absolute wall potential, an order deviation, …).
    pub value: f64,
    pub threshold: f64,
    pub status: String,
    pub residual: f64,
    pub scale: f64,
    pub relative: f64,
    pub method: String,
}

pub const CHECK_COLUMNS: &[&str] = &[
    "check",
    "value",
    "threshold",
    "status",
    "residual",
    "scale",
    "relative",
    "method",
];

impl CheckRow {
    /// A row gated on an arbitrary quantity; NaN fails.
    pub fn gate(
        check: impl Into<String>,
        value: f64,
        threshold: f64,
        residual: f64,
        scale: f64,
        relative: f64,
        method: impl Into<String>,
    ) -> Self {
        let pass = value <= threshold;
        Self {
            check: check.into(),
            value,
            threshold,
            status: if pass { "PASS" } else { "FAIL" }.into(),
            residual,
            scale,
            relative,
            method: method.into(),
        }
    }

    /// A row gating the relative residual of a report.
    pub fn from_report(
        check: impl Into<String>,
        report: &ResidualReport<f64>,
        threshold: f64,
    ) -> Self {
        Self::gate(
            check,
            report.relative,
            threshold,
            report.residual,
            report.scale,
            report.relative,
            report.method.clone(),
        )
    }

    pub fn passed(&self) -> bool {
        self.status == "PASS"
    }

    pub fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.check.clone()),
            Cell::Float(self.value),
            Cell::Float(self.threshold),
            Cell::Text(self.status.clone()),
            Cell::Float(self.residual),
            Cell::Float(self.scale),
            Cell::Float(self.relative),
            Cell::Text(self.method.clone()),
        ]
    }
}

/// What a command hands back to `main`: the files it wrote, a one-line
/// summary for stdout, and any checks that exceeded their thresholds.
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub failures: Vec<CheckRow>,
}

impl Outcome {
    pub fn new(files: Vec<PathBuf>, summary: String) -> Self {
        Self {
            files,
            summary,
            failures: Vec::new(),
        }
    }
}
