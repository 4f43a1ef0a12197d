use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::GridState;
use crate::metrics::{MetricRecord, CSV_HEADER};
use crate::trainer::Trainer;
use crate::Error;

use super::aggregate::{aggregate, AggregateSummary};
use super::ExperimentConfig;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Final state of one seed's run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub name: String,
    pub label: String,
    pub seed: u64,
    pub steps: u64,
    pub trajectories: u64,
    pub final_record: Option<MetricRecord>,
    pub smoothed_loss: Option<f64>,
    /// `None` when some mode was never sampled.
    pub trajectories_to_all_modes: Option<u64>,
    pub modes_found: usize,
    pub modes_total: usize,
    pub discovered_modes: Vec<GridState>,
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    record: &'a MetricRecord,
}

pub fn seed_dir(experiment_dir: &Path, seed: u64) -> PathBuf {
    experiment_dir.join(format!("seed-{seed}"))
}

fn checkpoint_dir(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step-{step:08}"))
}

/// Newest checkpoint under `run_dir`, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>, Error> {
    let root = run_dir.join(CHECKPOINT_DIR);
    if !root.is_dir() {
        return Ok(None);
    }
    let entries = fs::read_dir(&root).map_err(|e| Error::io(format!("listing {}", root.display()), e))?;
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(|e| Error::io("listing checkpoints", e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if path.join(crate::checkpoint::MANIFEST_FILE).is_file()
                && best.as_ref().is_none_or(|(s, _)| step > *s)
            {
                best = Some((step, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Keep the header and the rows with `step <= last_step`.
fn truncate_metrics(run_dir: &Path, last_step: u64) -> Result<(), Error> {
    let csv_path = run_dir.join(METRICS_CSV);
    let text = fs::read_to_string(&csv_path).unwrap_or_else(|_| format!("{CSV_HEADER}\n"));
    let mut kept = format!("{CSV_HEADER}\n");
    for line in text.lines().skip(1) {
        let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        if step.is_some_and(|s| s <= last_step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(&csv_path, kept).map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;

    let jsonl_path = run_dir.join(METRICS_JSONL);
    let text = fs::read_to_string(&jsonl_path).unwrap_or_default();
    let mut kept = String::new();
    for line in text.lines() {
        let step = serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.get("step").and_then(|s| s.as_u64()));
        if step.is_some_and(|s| s <= last_step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(&jsonl_path, kept).map_err(|e| Error::io(format!("writing {}", jsonl_path.display()), e))
}

struct MetricWriters {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
}

impl MetricWriters {
    fn open(run_dir: &Path, append: bool) -> Result<Self, Error> {
        let open = |name: &str| -> Result<BufWriter<File>, Error> {
            let path = run_dir.join(name);
            let file = if append {
                fs::OpenOptions::new().append(true).create(true).open(&path)
            } else {
                File::create(&path)
            };
            file.map(BufWriter::new)
                .map_err(|e| Error::io(format!("opening {}", path.display()), e))
        };
        let mut writers = Self {
            csv: open(METRICS_CSV)?,
            jsonl: open(METRICS_JSONL)?,
        };
        if !append {
            writeln!(writers.csv, "{CSV_HEADER}").map_err(|e| Error::io("writing metrics", e))?;
        }
        Ok(writers)
    }

    fn write(&mut self, hash: &str, record: &MetricRecord) -> std::io::Result<()> {
        writeln!(self.csv, "{}", record.csv_row())?;
        let line = serde_json::to_string(&JsonlRecord {
            config_hash: hash,
            record,
        })
        .map_err(std::io::Error::other)?;
        writeln!(self.jsonl, "{line}")
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()
    }
}

/// Train one seed into `run_dir`, optionally continuing from its newest checkpoint.
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    run_dir: &Path,
    resume: bool,
) -> Result<RunSummary, Error> {
    let hash = config.config_hash();
    let mut trainer_config = config.trainer.clone();
    trainer_config.seed = seed;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;

    let resume_from = if resume { latest_checkpoint(run_dir)? } else { None };
    let mut trainer = match &resume_from {
        Some(dir) => {
            let ckpt = Checkpoint::load(dir)?;
            if ckpt.config_hash != hash {
                return Err(Error::Checkpoint(format!(
                    "{} was written by config {}, not {hash}",
                    dir.display(),
                    ckpt.config_hash
                )));
            }
            truncate_metrics(run_dir, ckpt.step)?;
            log::info!("seed {seed}: resuming at step {}", ckpt.step);
            Trainer::restore(config.env.clone(), trainer_config, &ckpt)?
        }
        None => {
            let stale = run_dir.join(CHECKPOINT_DIR);
            if stale.is_dir() {
                fs::remove_dir_all(&stale)
                    .map_err(|e| Error::io(format!("clearing {}", stale.display()), e))?;
            }
            Trainer::new(config.env.clone(), trainer_config)?
        }
    };

    let mut run_config = config.clone();
    run_config.seeds = vec![seed];
    run_config.trainer.seed = seed;
    let config_text = format!("# config_hash = \"{hash}\"\n{}", run_config.to_toml());
    fs::write(run_dir.join(CONFIG_TOML), config_text)
        .map_err(|e| Error::io(format!("writing {}", run_dir.join(CONFIG_TOML).display()), e))?;

    let mut writers = MetricWriters::open(run_dir, resume_from.is_some())?;
    let cadence = config.trainer.checkpoint_cadence;
    let mut last_record = None;
    let mut last_saved = trainer.step();
    while !trainer.is_done() {
        let (_, record) = trainer.advance()?;
        let step = trainer.step();
        let at_step = |e: std::io::Error| Error::io(format!("step {step}: writing metrics"), e);
        if let Some(r) = record {
            writers.write(&hash, &r).map_err(at_step)?;
            last_record = Some(r);
        }
        if cadence > 0 && step % cadence == 0 {
            writers.flush().map_err(at_step)?;
            trainer.checkpoint(&hash).save(&checkpoint_dir(run_dir, step))?;
            last_saved = step;
        }
    }
    writers
        .flush()
        .map_err(|e| Error::io(format!("step {}: writing metrics", trainer.step()), e))?;
    let final_dir = checkpoint_dir(run_dir, trainer.step());
    if last_saved != trainer.step() || !final_dir.join(crate::checkpoint::MANIFEST_FILE).is_file() {
        trainer.checkpoint(&hash).save(&final_dir)?;
    }

    if last_record.is_none() {
        // resumed at the end of a finished run
        last_record = read_last_record(run_dir)?;
    }
    let tracker = trainer.metrics();
    let summary = RunSummary {
        config_hash: hash,
        name: config.name.clone(),
        label: config.label(),
        seed,
        steps: trainer.step(),
        trajectories: trainer.trajectories(),
        final_record: last_record,
        smoothed_loss: trainer.smoothed_loss(),
        trajectories_to_all_modes: tracker.trajectories_to_all_modes,
        modes_found: tracker.modes.count(),
        modes_total: tracker.modes.total(),
        discovered_modes: tracker.modes.discovered().cloned().collect(),
    };
    write_json(&run_dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

fn read_last_record(run_dir: &Path) -> Result<Option<MetricRecord>, Error> {
    let path = run_dir.join(METRICS_JSONL);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    match text.lines().last() {
        Some(line) => serde_json::from_str(line)
            .map(Some)
            .map_err(|e| Error::Metric(format!("{}: {e}", path.display()))),
        None => Ok(None),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Metric(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_summary(run_dir: &Path) -> Result<RunSummary, Error> {
    let path = run_dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Metric(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub experiment_dir: PathBuf,
    pub runs: Vec<RunSummary>,
    pub aggregate: AggregateSummary,
}

/// Run every seed of `config` under `experiment_dir` and aggregate them.
pub fn train_in(
    config: &ExperimentConfig,
    experiment_dir: &Path,
    seeds: &[u64],
    resume: bool,
) -> Result<TrainReport, Error> {
    let mut runs = Vec::with_capacity(seeds.len());
    let mut dirs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let dir = seed_dir(experiment_dir, seed);
        log::info!("{}: seed {seed} -> {}", config.name, dir.display());
        runs.push(run_seed(config, seed, &dir, resume)?);
        dirs.push(dir);
    }
    let aggregate = aggregate(&dirs, experiment_dir)?;
    Ok(TrainReport {
        experiment_dir: experiment_dir.to_path_buf(),
        runs,
        aggregate,
    })
}

/// `train` with the configured (or overridden) seeds under the output root.
pub fn cmd_train(
    config: &ExperimentConfig,
    seeds: Option<&[u64]>,
    resume: bool,
) -> Result<TrainReport, Error> {
    let seeds = seeds.unwrap_or(&config.seeds);
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("seeds: must not be empty".into()));
    }
    train_in(config, &config.experiment_dir(), seeds, resume)
}
