//! moe-lab: command-line driver for the mixture-of-experts regression lab.
//!
//! Subcommands mirror the library surface: `simulate` and `fit` expose a
//! single replicate for inspection, `sweep` runs a full rate study, `check`
//! runs the independence and derivative-identity audits, `counterexample`
//! builds the slow-rate sequences with their closed-form losses and ratio
//! probes, and `slope` re-fits log-log slopes from an existing records
//! file. Experiment configs are single JSON documents; unknown keys are
//! rejected so a typo cannot silently change a study.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use moe_core::fitting::{fit, InitMode};
use moe_core::harness::{
    estimate_slope, evaluate_losses, median, preset, preset_names, read_records, replicate_seed,
    run_sweep, ExperimentConfig, SweepOptions,
};
use moe_core::model::{DenseToSparseMixingMeasure, HierarchicalMixingMeasure, MixingModel, SoftmaxMixingMeasure};
use moe_core::{
    adversarial_sequence_hierarchical, adversarial_sequence_linear,
    adversarial_sequence_temperature, closed_form_l2r, closed_form_l3r, closed_form_l6r,
    identifiability_cases, l2_ratio_probe, rank_test, run_pde_audit,
};
use moe_core::data::generate_dataset;
use moe_core::voronoi::{loss_l2r, loss_l3r, loss_l6r};

#[derive(Parser)]
#[command(
    name = "moe-lab",
    version,
    about = "Simulation lab for softmax-gated mixture-of-experts regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where an experiment config comes from: a JSON file or a shipped preset.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// Path to an experiment config (JSON; unknown keys are an error).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Name of a shipped scenario (see `presets`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self, seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), None) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                let config: ExperimentConfig = serde_json::from_str(&text)
                    .with_context(|| format!("cannot parse config {}", path.display()))?;
                config
            }
            (None, Some(name)) => preset(name)?,
            _ => unreachable!("clap enforces exactly one source"),
        };
        if let Some(seed) = seed {
            config.master_seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// List the shipped scenario presets.
    Presets,
    /// Print a preset or config as canonical JSON (a starting point for
    /// custom configs).
    ShowConfig {
        #[command(flatten)]
        source: ConfigSource,
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Draw the first replicate's dataset and dump it as CSV (x0..x_{d-1}, y).
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Fit the first replicate (smallest n) and print the result as JSON.
    Fit {
        #[command(flatten)]
        source: ConfigSource,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Write to a file instead of stdout.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run a full replicate sweep and write records, report, and summary.
    Sweep {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory for records.csv, report.json, summary.txt.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
        /// Reuse complete replicates from an earlier run of the same config.
        #[arg(long)]
        resume: bool,
        /// Record wall time per replicate (makes the CSV non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Audit expert/router derivative independence and the exact
    /// parameter-interaction identities. Exits nonzero if any audit
    /// disagrees with its expected verdict.
    Check {
        /// Probe seed.
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Write the full audit report as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Build the slow-rate mixing-measure sequences, compare their losses
    /// to the closed forms, and probe the distance-to-loss ratios.
    Counterexample {
        /// Monte Carlo points for the ratio probe.
        #[arg(long, default_value_t = 50_000)]
        mc_points: usize,
        /// Probe seed.
        #[arg(long, default_value_t = 3)]
        seed: u64,
        /// Write the table as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Re-fit log-log slopes from an existing records.csv.
    Slope {
        /// Records file written by `sweep`.
        #[arg(long, value_name = "PATH")]
        records: PathBuf,
        /// Write the slope table as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, content)
                .with_context(|| format!("cannot write {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{content}"),
    }
    Ok(())
}

fn cmd_simulate(source: &ConfigSource, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let config = source.load(seed)?;
    let n = config.n_grid[0];
    let rep_seed = replicate_seed(&config, n, 0);
    let dataset = generate_dataset(
        &config.truth,
        &config.input,
        n as usize,
        config.noise_variance,
        rep_seed,
    )?;
    let mut buf = Vec::new();
    dataset.write_csv(&mut buf)?;
    write_or_print(out, String::from_utf8(buf)?.trim_end())
}

fn cmd_fit(source: &ConfigSource, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let config = source.load(seed)?;
    let n = config.n_grid[0];
    let rep_seed = replicate_seed(&config, n, 0);
    let dataset = generate_dataset(
        &config.truth,
        &config.input,
        n as usize,
        config.noise_variance,
        rep_seed,
    )?;
    let warm = if config.fit.init_mode == InitMode::Cold {
        None
    } else {
        Some(&config.truth)
    };
    let result = fit(&dataset, &config.shape, warm, &config.fit, rep_seed)?;
    let losses: Vec<serde_json::Value> = evaluate_losses(&config, &result.fitted, rep_seed)?
        .into_iter()
        .map(|(spec, value)| json!({ "name": spec.csv_name(), "r": spec.r(), "value": value }))
        .collect();
    let doc = json!({
        "scenario": config.scenario,
        "n": n,
        "replicate": 0,
        "seed": rep_seed,
        "fitted": result.fitted,
        "objective": result.objective,
        "converged": result.converged,
        "iterations": result.iterations,
        "winner_restart": result.winner_restart,
        "per_restart_objectives": result.per_restart_objectives,
        "losses": losses,
    });
    write_or_print(out, &serde_json::to_string_pretty(&doc)?)
}

fn cmd_sweep(
    source: &ConfigSource,
    out: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    resume: bool,
    timing: bool,
) -> Result<()> {
    let config = source.load(seed)?;
    let options = SweepOptions {
        threads,
        resume,
        timing,
    };
    let output = run_sweep(&config, out, &options)?;
    print!("{}", fs::read_to_string(&output.summary_path)?);
    eprintln!(
        "wrote {}, {}, {}",
        output.records_path.display(),
        output.report_path.display(),
        output.summary_path.display()
    );
    Ok(())
}

fn cmd_check(seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let mut all_ok = true;
    let mut case_docs = Vec::new();
    println!("derivative-family independence:");
    for case in identifiability_cases()? {
        let points = (4 * case.set.len()).max(512);
        let verdict = rank_test(&case.set, points, seed, 1e-6)?;
        let ok = verdict.independent == case.expect_independent;
        all_ok &= ok;
        println!(
            "  {:<34} expected {:<11} got {:<11} sigma ratio {:.3e}  {}",
            case.name,
            label(case.expect_independent),
            label(verdict.independent),
            verdict.sigma_min / verdict.sigma_max,
            if ok { "ok" } else { "MISMATCH" }
        );
        case_docs.push(json!({
            "name": case.name,
            "expected_independent": case.expect_independent,
            "verdict": verdict,
            "ok": ok,
        }));
    }
    let pde = run_pde_audit(seed);
    println!("parameter-interaction identities:");
    for regime in &pde.regimes {
        let ok = regime.passes();
        all_ok &= ok;
        println!(
            "  {:<34} {:<11} max residual {:.3e}  {}",
            regime.name,
            format!("{:?}", regime.regime).to_lowercase(),
            regime.max_residual,
            if ok { "ok" } else { "FAIL" }
        );
    }
    let doc = json!({ "seed": seed, "independence": case_docs, "identities": pde });
    if let Some(path) = out {
        write_or_print(Some(path), &serde_json::to_string_pretty(&doc)?)?;
    }
    if all_ok {
        println!("all audits agree with the expected verdicts");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("some audits disagree with the expected verdicts");
        Ok(ExitCode::from(2))
    }
}

fn label(independent: bool) -> &'static str {
    if independent {
        "independent"
    } else {
        "dependent"
    }
}

fn softmax_parts(m: &MixingModel) -> &SoftmaxMixingMeasure {
    match m {
        MixingModel::Softmax(m) => m,
        _ => unreachable!("sequence preserves the family"),
    }
}

fn d2s_parts(m: &MixingModel) -> &DenseToSparseMixingMeasure {
    match m {
        MixingModel::DenseToSparse(m) => m,
        _ => unreachable!("sequence preserves the family"),
    }
}

fn hier_parts(m: &MixingModel) -> &HierarchicalMixingMeasure {
    match m {
        MixingModel::Hierarchical(m) => m,
        _ => unreachable!("sequence preserves the family"),
    }
}

fn cmd_counterexample(mc_points: usize, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    const N_GRID: [u64; 3] = [10, 100, 1000];
    const R: f64 = 1.0;
    let mut docs = Vec::new();
    let mut all_ok = true;

    struct Sequence<'a> {
        name: &'static str,
        truth: MixingModel,
        build: Box<dyn Fn(u64) -> moe_core::error::Result<MixingModel> + 'a>,
        closed_form: Box<dyn Fn(u64) -> moe_core::error::Result<f64> + 'a>,
        loss: Box<dyn Fn(&MixingModel, &MixingModel) -> moe_core::error::Result<f64> + 'a>,
    }

    let flat_truth = preset("softmax_linear_over")?.truth;
    let temp_truth = preset("d2s_linear_router")?.truth;
    let hier_truth = preset("hier_linear_over")?.truth;

    let flat = softmax_parts(&flat_truth).clone();
    let temp = d2s_parts(&temp_truth).clone();
    let hier = hier_parts(&hier_truth).clone();

    let sequences = vec![
        Sequence {
            name: "softmax_linear_split",
            truth: flat_truth.clone(),
            build: Box::new({
                let flat = flat.clone();
                move |n| Ok(MixingModel::Softmax(adversarial_sequence_linear(&flat, n, R)?))
            }),
            closed_form: Box::new({
                let flat = flat.clone();
                move |n| closed_form_l2r(&flat, n, R)
            }),
            loss: Box::new(|g, t| Ok(loss_l2r(softmax_parts(g), softmax_parts(t), R)?.value)),
        },
        Sequence {
            name: "temperature_drift",
            truth: temp_truth.clone(),
            build: Box::new({
                let temp = temp.clone();
                move |n| {
                    Ok(MixingModel::DenseToSparse(adversarial_sequence_temperature(
                        &temp, n, R, 2,
                    )?))
                }
            }),
            closed_form: Box::new({
                let temp = temp.clone();
                move |n| closed_form_l3r(&temp, n, R)
            }),
            loss: Box::new(|g, t| Ok(loss_l3r(d2s_parts(g), d2s_parts(t), R)?.value)),
        },
        Sequence {
            name: "hierarchical_inner_split",
            truth: hier_truth.clone(),
            build: Box::new({
                let hier = hier.clone();
                move |n| {
                    Ok(MixingModel::Hierarchical(adversarial_sequence_hierarchical(
                        &hier, n, R,
                    )?))
                }
            }),
            closed_form: Box::new({
                let hier = hier.clone();
                move |n| closed_form_l6r(&hier, n, R)
            }),
            loss: Box::new(|g, t| Ok(loss_l6r(hier_parts(g), hier_parts(t), R)?.value)),
        },
    ];

    for seq in &sequences {
        println!("{} (r = {R}):", seq.name);
        let mut rows = Vec::new();
        for n in N_GRID {
            let candidate = (seq.build)(n)?;
            let loss = (seq.loss)(&candidate, &seq.truth)?;
            let closed = (seq.closed_form)(n)?;
            let rel = (loss - closed).abs() / closed.abs().max(f64::MIN_POSITIVE);
            all_ok &= rel <= 1e-10;
            println!("  n = {n:>5}: loss {loss:.6e}  closed form {closed:.6e}  rel err {rel:.1e}");
            rows.push(json!({ "n": n, "loss": loss, "closed_form": closed, "rel_err": rel }));
        }
        let input = moe_core::data::InputDistribution::unit_box(seq.truth.dimension());
        let ratios = l2_ratio_probe(
            |n| (seq.build)(n),
            &seq.truth,
            |g, t| (seq.loss)(g, t),
            &N_GRID,
            &input,
            mc_points,
            seed,
        )?;
        for row in &ratios {
            println!(
                "  n = {:>5}: |f_n - f*| = {:.6e}  ratio to loss = {:.6e}",
                row.n,
                row.l2_distance,
                row.ratio.unwrap_or(f64::NAN)
            );
        }
        let first = ratios.first().and_then(|r| r.ratio);
        let last = ratios.last().and_then(|r| r.ratio);
        if let (Some(first), Some(last)) = (first, last) {
            let collapsed = last <= 0.1 * first;
            all_ok &= collapsed;
            println!(
                "  ratio collapse {first:.3e} -> {last:.3e}: {}",
                if collapsed { "ok" } else { "NOT OBSERVED" }
            );
        }
        docs.push(json!({ "sequence": seq.name, "closed_form_rows": rows, "ratio_rows": ratios }));
    }

    if let Some(path) = out {
        let doc = json!({ "mc_points": mc_points, "seed": seed, "sequences": docs });
        write_or_print(Some(path), &serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_slope(records: &Path, out: Option<&Path>) -> Result<()> {
    let rows = read_records(records)?;
    if rows.is_empty() {
        bail!("{} holds no records", records.display());
    }
    let mut losses: Vec<(String, Option<f64>)> = Vec::new();
    for row in &rows {
        let key = (row.loss_name.clone(), row.r);
        if !losses.contains(&key) {
            losses.push(key);
        }
    }
    let mut ns: Vec<u64> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();

    let mut docs = Vec::new();
    println!("{:<10} {:>4} {:>9} {:>7} {:>7}", "loss", "r", "slope", "r^2", "points");
    for (name, r) in &losses {
        let points: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|row| {
                        row.n == n && row.loss_name == *name && row.r == *r && row.loss_value.is_finite()
                    })
                    .map(|row| row.loss_value)
                    .collect();
                (n as f64, median(&values).unwrap_or(f64::NAN))
            })
            .collect();
        match estimate_slope(&points) {
            Ok(fit) => {
                println!(
                    "{:<10} {:>4} {:>+9.3} {:>7.3} {:>7}",
                    name,
                    r.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    fit.slope,
                    fit.r_squared,
                    fit.used_points
                );
                docs.push(json!({
                    "loss_name": name, "r": r, "slope": fit.slope,
                    "intercept": fit.intercept, "r_squared": fit.r_squared,
                    "used_points": fit.used_points, "excluded_points": fit.excluded_points,
                }));
            }
            Err(e) => {
                println!(
                    "{:<10} {:>4}   slope unavailable: {e}",
                    name,
                    r.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
                );
                docs.push(json!({ "loss_name": name, "r": r, "error": e.to_string() }));
            }
        }
    }
    if let Some(path) = out {
        write_or_print(Some(path), &serde_json::to_string_pretty(&json!({ "entries": docs }))?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ShowConfig { source, out } => {
            let config = source.load(None)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&config)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { source, seed, out } => {
            cmd_simulate(source, *seed, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { source, seed, out } => {
            cmd_fit(source, *seed, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            source,
            out,
            seed,
            threads,
            resume,
            timing,
        } => {
            cmd_sweep(source, out, *seed, *threads, *resume, *timing)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed, out } => cmd_check(*seed, out.as_deref()),
        Command::Counterexample {
            mc_points,
            seed,
            out,
        } => cmd_counterexample(*mc_points, *seed, out.as_deref()),
        Command::Slope { records, out } => {
            cmd_slope(records, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
