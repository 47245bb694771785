//! CSV artifacts and run records.
//!
//! Every CSV starts with a `# mlqmc <table> v<version>` comment line followed
//! by a header row; consumers key off column names. Floats use Rust's
//! shortest round-trip formatting, so identical runs give identical bytes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use mlqmc_evp::mlqmc::{AdaptStep, LevelStats, MLEstimate};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const LEVELS_COLUMNS: [&str; 9] =
    ["ell", "h", "s", "N", "R", "mean", "variance", "cost_seconds", "solver_iters_mean"];
pub const SUMMARY_COLUMNS: [&str; 5] = ["quantity", "total", "bias_estimate", "stat_error", "cost_total"];
pub const TRACE_COLUMNS: [&str; 5] = ["step", "ell_doubled", "N_after", "var_sum", "bias_est"];
pub const RATES_COLUMNS: [&str; 4] = ["quantity", "rate", "slope", "points"];
pub const VALIDATE_COLUMNS: [&str; 6] = ["check", "quantity", "estimator", "oracle", "abs_error", "rel_error"];

fn write_table(path: &Path, table: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(file, "# mlqmc {table} v{SCHEMA_VERSION}").map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_levels(path: &Path, levels: &[LevelStats]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = levels
        .iter()
        .map(|l| {
            vec![
                l.ell.to_string(),
                l.h.to_string(),
                l.s.to_string(),
                l.n.to_string(),
                l.r.to_string(),
                l.mean.to_string(),
                l.variance.to_string(),
                l.cost_per_sample.to_string(),
                l.solver_iters_mean.to_string(),
            ]
        })
        .collect();
    write_table(path, "levels", &LEVELS_COLUMNS, &rows)
}

pub fn write_summary(path: &Path, est: &MLEstimate) -> Result<(), CliError> {
    let row = vec![
        est.quantity.name().to_string(),
        est.total.to_string(),
        est.bias_estimate.to_string(),
        est.statistical_error.to_string(),
        est.cost_total.to_string(),
    ];
    write_table(path, "summary", &SUMMARY_COLUMNS, &[row])
}

pub fn write_trace(path: &Path, trace: &[AdaptStep]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|t| {
            vec![
                t.step.to_string(),
                t.ell.to_string(),
                t.n_after.to_string(),
                t.var_sum.to_string(),
                t.bias_estimate.to_string(),
            ]
        })
        .collect();
    write_table(path, "adapt_trace", &TRACE_COLUMNS, &rows)
}

pub struct RateRow {
    pub quantity: String,
    pub rate: String,
    pub slope: f64,
    pub points: usize,
}

pub fn write_rates(path: &Path, rates: &[RateRow]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = rates
        .iter()
        .map(|r| vec![r.quantity.clone(), r.rate.clone(), r.slope.to_string(), r.points.to_string()])
        .collect();
    write_table(path, "rates", &RATES_COLUMNS, &rows)
}

pub struct ValidateRow {
    pub check: String,
    pub quantity: String,
    pub estimator: f64,
    pub oracle: f64,
}

pub fn write_validate(path: &Path, checks: &[ValidateRow]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            let abs = (c.estimator - c.oracle).abs();
            vec![
                c.check.clone(),
                c.quantity.clone(),
                c.estimator.to_string(),
                c.oracle.to_string(),
                abs.to_string(),
                (abs / c.oracle.abs()).to_string(),
            ]
        })
        .collect();
    write_table(path, "validate", &VALIDATE_COLUMNS, &rows)
}

/// Everything needed to reproduce a run: code version, seed and the resolved config.
#[derive(Serialize)]
pub struct Manifest<'a> {
    pub version: &'a str,
    pub command: &'a str,
    pub mode: &'a str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: &'a crate::config::ExperimentConfig,
}

/// Timings and other run-to-run varying facts, kept out of the CSVs.
#[derive(Serialize, Default)]
pub struct Metadata {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub wall_seconds: f64,
    pub workers: usize,
    pub cbc_built: usize,
    pub cbc_reused: usize,
    pub level_wall_seconds: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
