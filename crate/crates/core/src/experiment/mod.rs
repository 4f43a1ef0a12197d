//! Experiment orchestration: TOML configs, presets, per-seed runs with
//! metric files and checkpoints, aggregation across seeds, schedule sweeps,
//! plot-data export and oracle dumps.
//!
//! A training run writes, under `<output root>/<name>/seed-<s>/`:
//!
//! - `config.toml`: the effective configuration, headed by its hash
//! - `metrics.csv`: one row per metric step
//! - `metrics.jsonl`: the same rows plus the config hash and exact sampler L1
//! - `summary.json`: final metrics and discovered modes
//! - `checkpoints/step-<n>/`: resumable training state
//!
//! and `aggregate.csv` / `aggregate.json` one level up.

mod aggregate;
mod config;
mod plot;
mod presets;
mod runner;
mod sweep;

use std::io::Write;
use std::path::Path;

pub use aggregate::{
    aggregate, mean_stderr, AggregateSummary, MeanStderr, MetricTable, AGGREGATED_COLUMNS, AGGREGATE_CSV,
    AGGREGATE_JSON,
};
pub use config::{ExperimentConfig, OUTPUT_ROOT_VAR};
pub use plot::{cmd_plot_data, expand_run_dirs, PlotReport, L1_CSV, MODES_CSV};
pub use presets::{preset, preset_names};
pub use runner::{
    cmd_train, latest_checkpoint, read_summary, run_seed, seed_dir, train_in, RunSummary, TrainReport,
    CHECKPOINT_DIR, CONFIG_TOML, METRICS_CSV, METRICS_JSONL, SUMMARY_JSON,
};
pub use sweep::{best_cell, cmd_sweep, SweepCell, SweepReport, SweepSpec, BEST_JSON, SWEEP_CSV};

use crate::checkpoint::Checkpoint;
use crate::env::HyperGrid;
use crate::oracle::{sampler_distribution, target_distribution};
use crate::policy::{PolicyArch, PolicySet};
use crate::Error;

/// Write the target distribution of `config`'s grid as CSV, or, given a
/// checkpoint, the exact terminal distribution of its online network.
pub fn cmd_oracle<W: Write>(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out: W,
) -> Result<(), Error> {
    let env = HyperGrid::new(config.env.clone())?;
    let table = match checkpoint {
        None => target_distribution(&env)?,
        Some(dir) => {
            let ckpt = Checkpoint::load(dir)?;
            let arch = PolicyArch::new(
                &env,
                config.trainer.model.clone(),
                config.trainer.objective.needs_log_flow(),
            );
            let params = PolicySet::from_tensors(arch, ckpt.online)?;
            sampler_distribution(&params, &env)?
        }
    };
    table
        .write_csv(&env, out)
        .map_err(|e| Error::io("writing distribution", e))
}
