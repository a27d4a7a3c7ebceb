//! Experiment harness: configuration for rate studies, deterministic
//! replicate sweeps over a sample-size grid, loss records with a stable CSV
//! schema, and log-log slope reports checked against target rates.

pub mod config;
pub mod presets;
pub mod records;
pub mod report;
pub mod slope;
pub mod sweep;

pub use config::{config_hash, ExperimentConfig, LossSpec, RateCheck, RateTarget};
pub use presets::{preset, preset_names, DEFAULT_MASTER_SEED};
pub use records::{read_records, write_records, RecordRow, CSV_HEADER};
pub use report::{build_report, emit_report, PerNSummary, RateEntry, RateReport, Timing};
pub use slope::{estimate_slope, median, quartiles, SlopeFit};
pub use sweep::{
    evaluate_losses, replicate_seed, run_replicate, run_sweep, SweepOptions, SweepOutput,
};
