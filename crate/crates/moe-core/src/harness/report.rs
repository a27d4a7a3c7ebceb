//! Rate reports: per-n order statistics, fitted log-log slopes, and the
//! verdicts against the configured targets.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::config::{ExperimentConfig, RateTarget};
use super::records::{write_records, RecordRow};
use super::slope::{estimate_slope, quartiles};

/// Order statistics of one loss at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerNSummary {
    pub n: u64,
    /// Median over replicates with a finite loss; NaN when there are none.
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Replicates with a finite loss value.
    pub finite: usize,
    /// Replicates whose fit failed or produced a non-finite loss.
    pub failed: usize,
}

/// Slope verdict for one tracked loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub loss_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub per_n: Vec<PerNSummary>,
    /// Fitted log-log slope of the medians; absent when estimation failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<RateTarget>,
    /// Whether the slope meets the target; absent when there is no target
    /// or no slope.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

/// Wall-clock accounting for one run. Timing is reporting only: it never
/// feeds back into the records and is excluded from determinism claims.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_wall_ms: u64,
    /// Replicates executed in this run (resumed ones not included).
    pub replicates_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scenario: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    pub entries: Vec<RateEntry>,
    pub timing: Timing,
}

impl RateReport {
    /// All configured rate checks passed (entries without a target do not
    /// count; a missing slope under a target counts as a failure).
    pub fn all_checks_pass(&self) -> bool {
        self.entries
            .iter()
            .filter(|e| e.target.is_some())
            .all(|e| e.pass == Some(true))
    }
}

/// Aggregate raw records into the per-loss rate table.
pub fn build_report(
    config: &ExperimentConfig,
    rows: &[RecordRow],
    config_hash: &str,
    timing: Timing,
) -> Result<RateReport> {
    let mut entries = Vec::with_capacity(config.losses.len());
    for spec in &config.losses {
        let name = spec.csv_name();
        let mut per_n = Vec::with_capacity(config.n_grid.len());
        for &n in &config.n_grid {
            let values: Vec<f64> = rows
                .iter()
                .filter(|row| row.n == n && row.loss_name == name && row.r == spec.r())
                .map(|row| row.loss_value)
                .collect();
            let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            let (q1, q2, q3) = quartiles(&finite).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            per_n.push(PerNSummary {
                n,
                median: q2,
                q1,
                q3,
                finite: finite.len(),
                failed: values.len() - finite.len(),
            });
        }
        let points: Vec<(f64, f64)> = per_n.iter().map(|s| (s.n as f64, s.median)).collect();
        let (slope, intercept, r_squared, slope_error) = match estimate_slope(&points) {
            Ok(fit) => (
                Some(fit.slope),
                Some(fit.intercept),
                Some(fit.r_squared),
                None,
            ),
            Err(e) => (None, None, None, Some(e.to_string())),
        };
        let target = config
            .rate_checks
            .iter()
            .find(|check| check.loss == *spec)
            .map(|check| check.target);
        let pass = target.map(|t| match (t, slope) {
            (RateTarget::Band { lo, hi, .. }, Some(s)) => s >= lo && s <= hi,
            (RateTarget::LogSlow { min_slope }, Some(s)) => s >= min_slope,
            (_, None) => false,
        });
        entries.push(RateEntry {
            loss_name: name.to_string(),
            r: spec.r(),
            per_n,
            slope,
            intercept,
            r_squared,
            slope_error,
            target,
            pass,
        });
    }
    Ok(RateReport {
        scenario: config.scenario.clone(),
        master_seed: config.master_seed,
        config_hash: config_hash.to_string(),
        n_grid: config.n_grid.clone(),
        replicates: config.replicates,
        entries,
        timing,
    })
}

fn describe_target(target: &RateTarget) -> String {
    match target {
        RateTarget::Band { target, lo, hi } => format!("{target} in [{lo}, {hi}]"),
        RateTarget::LogSlow { min_slope } => format!("log-slow (> {min_slope})"),
    }
}

fn render_summary(report: &RateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario:    {}", report.scenario);
    let _ = writeln!(out, "master seed: {}", report.master_seed);
    let _ = writeln!(out, "config hash: {}", report.config_hash);
    let _ = writeln!(
        out,
        "grid:        {} sizes x {} replicates: {:?}",
        report.n_grid.len(),
        report.replicates,
        report.n_grid
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<10} {:>4} {:>9} {:>7} {:<22} {}",
        "loss", "r", "slope", "r^2", "target", "verdict"
    );
    for entry in &report.entries {
        let r = entry.r.map(|r| format!("{r}")).unwrap_or_else(|| "-".into());
        let slope = entry
            .slope
            .map(|s| format!("{s:+.3}"))
            .unwrap_or_else(|| "n/a".into());
        let r2 = entry
            .r_squared
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "n/a".into());
        let target = entry
            .target
            .as_ref()
            .map(describe_target)
            .unwrap_or_else(|| "-".into());
        let verdict = match entry.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "-",
        };
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>9} {:>7} {:<22} {}",
            entry.loss_name, r, slope, r2, target, verdict
        );
        if let Some(err) = &entry.slope_error {
            let _ = writeln!(out, "    slope unavailable: {err}");
        }
    }
    let failed: usize = report
        .entries
        .iter()
        .flat_map(|e| &e.per_n)
        .map(|s| s.failed)
        .sum();
    if failed > 0 {
        let _ = writeln!(out, "\nnon-finite loss evaluations: {failed}");
    }
    out
}

/// Write `records.csv`, `report.json`, and `summary.txt` into `out_dir`.
/// Returns the report and summary paths.
pub fn emit_report(
    rows: &[RecordRow],
    report: &RateReport,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    write_records(&out_dir.join("records.csv"), rows)?;
    let report_path = out_dir.join("report.json");
    let tmp = report_path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(report)?)?;
    fs::rename(&tmp, &report_path)?;
    let summary_path = out_dir.join("summary.txt");
    let tmp = summary_path.with_extension("txt.tmp");
    fs::write(&tmp, render_summary(report))?;
    fs::rename(&tmp, &summary_path)?;
    Ok((report_path, summary_path))
}
