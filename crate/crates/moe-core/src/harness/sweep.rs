//! Replicate sweeps over the sample-size grid.
//!
//! Every replicate is a pure function of `(config, n, replicate)`: its data
//! seed and fit seed are derived from the master seed and its grid position,
//! never from execution order. Replicates therefore parallelize freely and a
//! sweep writes the same records under any thread count. Records are
//! checkpointed after each completed sample size, and a resumed sweep
//! re-runs only the replicates that are missing from the checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checks::probe::l2_distance;
use crate::data::generate_dataset;
use crate::error::{Error, Result};
use crate::fitting::{fit, InitMode};
use crate::model::MixingModel;
use crate::rng::derive_seed;
use crate::voronoi::{
    loss_l1, loss_l2r, loss_l3r, loss_l4, loss_l5, loss_l6r, max_param_error,
};

use super::config::{config_hash, ExperimentConfig, LossSpec};
use super::records::{read_records, write_records, RecordRow};
use super::report::{build_report, emit_report, RateReport, Timing};

/// Execution knobs; nothing here may change the recorded numbers except
/// `timing`, which fills the otherwise-zero `wall_ms` column.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Worker threads for the replicate pool; `None` uses the rayon default.
    pub threads: Option<usize>,
    /// Reuse complete replicates from an earlier run of the same config.
    pub resume: bool,
    /// Record per-replicate wall time in the CSV (breaks byte-for-byte
    /// comparability between runs, so it is off by default).
    pub timing: bool,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<RecordRow>,
    pub report: RateReport,
    pub records_path: PathBuf,
    pub report_path: PathBuf,
    pub summary_path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepMeta {
    config_hash: String,
    config: ExperimentConfig,
}

/// Seed of one replicate's data draw and fit, derived from the master seed
/// and the grid position alone.
pub fn replicate_seed(config: &ExperimentConfig, n: u64, replicate: u64) -> u64 {
    derive_seed(config.master_seed, "sweep.replicate", &[n, replicate])
}

/// Evaluate every tracked loss of `config` on a fitted model. `seed` is the
/// replicate seed; it only affects the Monte Carlo grid of the
/// regression-gap loss.
pub fn evaluate_losses(
    config: &ExperimentConfig,
    fitted: &MixingModel,
    seed: u64,
) -> Result<Vec<(LossSpec, f64)>> {
    config
        .losses
        .iter()
        .map(|spec| Ok((*spec, evaluate_loss(spec, fitted, config, seed)?)))
        .collect()
}

fn evaluate_loss(
    spec: &LossSpec,
    fitted: &MixingModel,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let truth = &config.truth;
    match (spec, fitted, truth) {
        (LossSpec::L1, MixingModel::Softmax(f), MixingModel::Softmax(t)) => {
            Ok(loss_l1(f, t)?.value)
        }
        (LossSpec::L2r { r }, MixingModel::Softmax(f), MixingModel::Softmax(t)) => {
            Ok(loss_l2r(f, t, *r)?.value)
        }
        (LossSpec::L3r { r }, MixingModel::DenseToSparse(f), MixingModel::DenseToSparse(t)) => {
            Ok(loss_l3r(f, t, *r)?.value)
        }
        (LossSpec::TauGap { r }, MixingModel::DenseToSparse(f), MixingModel::DenseToSparse(t)) => {
            Ok(loss_l3r(f, t, *r)?
                .term("tau_terms")
                .expect("tempered loss always reports a tau term"))
        }
        (LossSpec::L4, MixingModel::DenseToSparse(f), MixingModel::DenseToSparse(t)) => {
            Ok(loss_l4(f, t)?.value)
        }
        (LossSpec::L5, MixingModel::Hierarchical(f), MixingModel::Hierarchical(t)) => {
            Ok(loss_l5(f, t)?.value)
        }
        (LossSpec::L6r { r }, MixingModel::Hierarchical(f), MixingModel::Hierarchical(t)) => {
            Ok(loss_l6r(f, t, *r)?.value)
        }
        (LossSpec::ParamErr, f, t) => max_param_error(f, t),
        (LossSpec::RegL2, f, t) => l2_distance(f, t, &config.input, config.mc_points, seed),
        _ => Err(Error::FamilyMismatch {
            expected: truth.family_label(),
            got: fitted.family_label(),
        }),
    }
}

/// Run one replicate: draw its dataset, fit, and evaluate every tracked
/// loss. A fit that fails outright (every restart diverged) is reported as
/// a flagged row set (`converged = false`, NaN losses), not an error, so a
/// sweep survives pathological draws and the report can count them.
pub fn run_replicate(config: &ExperimentConfig, n: u64, replicate: u64) -> Result<Vec<RecordRow>> {
    let seed = replicate_seed(config, n, replicate);
    let dataset = generate_dataset(
        &config.truth,
        &config.input,
        n as usize,
        config.noise_variance,
        seed,
    )?;
    let warm = if config.fit.init_mode == InitMode::Cold {
        None
    } else {
        Some(&config.truth)
    };
    let started = Instant::now();
    let outcome = fit(&dataset, &config.shape, warm, &config.fit, seed);
    let wall_ms = started.elapsed().as_millis() as u64;

    let mut rows = Vec::with_capacity(config.losses.len());
    match outcome {
        Ok(result) => {
            for spec in &config.losses {
                rows.push(RecordRow {
                    scenario: config.scenario.clone(),
                    n,
                    replicate,
                    loss_name: spec.csv_name().to_string(),
                    r: spec.r(),
                    loss_value: evaluate_loss(spec, &result.fitted, config, seed)?,
                    objective: result.objective,
                    converged: result.converged,
                    winner_start: result.winner_restart as u64,
                    wall_ms,
                });
            }
        }
        Err(Error::FitFailure { .. }) => {
            for spec in &config.losses {
                rows.push(RecordRow {
                    scenario: config.scenario.clone(),
                    n,
                    replicate,
                    loss_name: spec.csv_name().to_string(),
                    r: spec.r(),
                    loss_value: f64::NAN,
                    objective: f64::INFINITY,
                    converged: false,
                    winner_start: 0,
                    wall_ms,
                });
            }
        }
        Err(e) => return Err(e),
    }
    Ok(rows)
}

fn check_resume_rows(
    config: &ExperimentConfig,
    rows: Vec<RecordRow>,
) -> Result<BTreeMap<(u64, u64), Vec<RecordRow>>> {
    let mut groups: BTreeMap<(u64, u64), Vec<RecordRow>> = BTreeMap::new();
    for row in rows {
        if row.scenario != config.scenario {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "checkpoint row for scenario `{}` cannot resume `{}`",
                    row.scenario, config.scenario
                ),
            });
        }
        if !config.n_grid.contains(&row.n) || row.replicate >= config.replicates {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "checkpoint row (n = {}, replicate = {}) lies outside the configured grid",
                    row.n, row.replicate
                ),
            });
        }
        groups.entry((row.n, row.replicate)).or_default().push(row);
    }
    for ((n, replicate), group) in &groups {
        let expected: Vec<(&str, Option<f64>)> =
            config.losses.iter().map(|s| (s.csv_name(), s.r())).collect();
        let got: Vec<(&str, Option<f64>)> =
            group.iter().map(|r| (r.loss_name.as_str(), r.r)).collect();
        if got != expected {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "checkpoint rows for (n = {n}, replicate = {replicate}) track {got:?}, config tracks {expected:?}"
                ),
            });
        }
    }
    Ok(groups)
}

fn write_meta(path: &Path, meta: &SweepMeta) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(meta)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Run (or resume) the whole grid and emit records, report, and summary
/// into `out_dir`.
pub fn run_sweep(
    config: &ExperimentConfig,
    out_dir: &Path,
    options: &SweepOptions,
) -> Result<SweepOutput> {
    config.validate()?;
    let hash = config_hash(config)?;
    fs::create_dir_all(out_dir)?;
    let records_path = out_dir.join("records.csv");
    let meta_path = out_dir.join("sweep.meta.json");

    let mut done: BTreeMap<(u64, u64), Vec<RecordRow>> = BTreeMap::new();
    if options.resume && records_path.exists() {
        let meta_bytes = fs::read(&meta_path).map_err(|_| Error::InvalidConfig {
            reason: format!(
                "cannot resume: {} exists but {} is missing",
                records_path.display(),
                meta_path.display()
            ),
        })?;
        let meta: SweepMeta = serde_json::from_slice(&meta_bytes)?;
        if meta.config_hash != hash {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "cannot resume: checkpoint was written by config {}, this run is {}",
                    meta.config_hash, hash
                ),
            });
        }
        done = check_resume_rows(config, read_records(&records_path)?)?;
    }
    write_meta(&meta_path, &SweepMeta {
        config_hash: hash.clone(),
        config: config.clone(),
    })?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig {
            reason: format!("cannot build worker pool: {e}"),
        })?;

    let started = Instant::now();
    let mut replicates_run = 0usize;
    for &n in &config.n_grid {
        let todo: Vec<u64> = (0..config.replicates)
            .filter(|rep| !done.contains_key(&(n, *rep)))
            .collect();
        if todo.is_empty() {
            continue;
        }
        replicates_run += todo.len();
        let blocks: Vec<Vec<RecordRow>> = pool.install(|| {
            todo.par_iter()
                .map(|&replicate| {
                    let mut rows = run_replicate(config, n, replicate)?;
                    if !options.timing {
                        for row in &mut rows {
                            row.wall_ms = 0;
                        }
                    }
                    Ok(rows)
                })
                .collect::<Result<_>>()
        })?;
        for (replicate, rows) in todo.into_iter().zip(blocks) {
            done.insert((n, replicate), rows);
        }
        let flat: Vec<RecordRow> = done.values().flatten().cloned().collect();
        write_records(&records_path, &flat)?;
    }
    let timing = Timing {
        total_wall_ms: started.elapsed().as_millis() as u64,
        replicates_run,
    };

    let rows: Vec<RecordRow> = done.into_values().flatten().collect();
    let report = build_report(config, &rows, &hash, timing)?;
    let (report_path, summary_path) = emit_report(&rows, &report, out_dir)?;
    Ok(SweepOutput {
        rows,
        report,
        records_path,
        report_path,
        summary_path,
    })
}
