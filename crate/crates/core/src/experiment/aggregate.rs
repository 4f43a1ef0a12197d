use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Error;

use super::runner::{read_summary, write_json, RunSummary, METRICS_CSV};

pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";

/// Metric columns averaged across seeds.
pub const AGGREGATED_COLUMNS: [&str; 6] = ["loss", "l1", "modes", "modes_frac", "mean_reward", "logZ"];

/// Numeric CSV table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub path: PathBuf,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricTable {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::Metric(format!("{}: {e}", path.display())))?;
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Metric(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Metric(format!("{}: {e}", path.display())))?;
            let row = record
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Metric(format!(
                            "{}: row {}: {v:?} is not a number",
                            path.display(),
                            i + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, Error> {
        let idx = self.columns.iter().position(|c| c == name).ok_or_else(|| {
            Error::Metric(format!("{}: missing metric column `{name}`", self.path.display()))
        })?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Sample mean and standard error (`sd / sqrt(n)`, zero for one value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(values);
        Self { mean, stderr }
    }
}

/// Across-seed statistics of one experiment, written as `aggregate.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub config_hash: String,
    pub label: String,
    pub seeds: Vec<u64>,
    /// Final value of each metric.
    pub final_metrics: BTreeMap<String, MeanStderr>,
    /// Runs that never sampled every mode count with their full budget.
    pub trajectories_to_all_modes: MeanStderr,
    pub censored_runs: usize,
}

/// Verify that all runs share one config hash and return it.
pub fn common_hash(summaries: &[RunSummary]) -> Result<String, Error> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::Metric("no runs to aggregate".into()))?;
    for s in summaries {
        if s.config_hash != first.config_hash {
            return Err(Error::Metric(format!(
                "refusing to mix config hashes {} (seed {}) and {} (seed {})",
                first.config_hash, first.seed, s.config_hash, s.seed
            )));
        }
    }
    Ok(first.config_hash.clone())
}

/// Per-step mean and standard error across `run_dirs`, written to `out_dir`.
pub fn aggregate(run_dirs: &[PathBuf], out_dir: &Path) -> Result<AggregateSummary, Error> {
    let summaries = run_dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<Result<Vec<_>, _>>()?;
    let hash = common_hash(&summaries)?;
    let tables = run_dirs
        .iter()
        .map(|d| MetricTable::read(&d.join(METRICS_CSV)))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = tables[0].column("step")?;
    for t in &tables[1..] {
        if t.column("step")? != steps {
            return Err(Error::Metric(format!(
                "{} logs different steps than {}",
                t.path.display(),
                tables[0].path.display()
            )));
        }
    }
    let trajectories = tables[0].column("trajectories")?;
    let columns = AGGREGATED_COLUMNS
        .iter()
        .map(|c| tables.iter().map(|t| t.column(c)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;

    let mut text = String::from("config_hash,step,trajectories,n");
    for c in AGGREGATED_COLUMNS {
        text.push_str(&format!(",{c}_mean,{c}_stderr"));
    }
    text.push('\n');
    for (row, (step, traj)) in steps.iter().zip(&trajectories).enumerate() {
        text.push_str(&format!("{hash},{step},{traj},{}", tables.len()));
        for per_run in &columns {
            let values: Vec<f64> = per_run.iter().map(|col| col[row]).collect();
            let (m, s) = mean_stderr(&values);
            text.push_str(&format!(",{m},{s}"));
        }
        text.push('\n');
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let csv_path = out_dir.join(AGGREGATE_CSV);
    fs::write(&csv_path, text).map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;

    let mut final_metrics = BTreeMap::new();
    for (c, per_run) in AGGREGATED_COLUMNS.iter().zip(&columns) {
        let last: Vec<f64> = per_run.iter().filter_map(|col| col.last().copied()).collect();
        final_metrics.insert(c.to_string(), MeanStderr::of(&last));
    }
    let oracle: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.final_record.as_ref().and_then(|r| r.oracle_l1))
        .collect();
    if oracle.len() == summaries.len() {
        final_metrics.insert("oracle_l1".into(), MeanStderr::of(&oracle));
    }
    let to_all: Vec<f64> = summaries
        .iter()
        .map(|s| s.trajectories_to_all_modes.unwrap_or(s.trajectories) as f64)
        .collect();
    let summary = AggregateSummary {
        config_hash: hash,
        label: summaries[0].label.clone(),
        seeds: summaries.iter().map(|s| s.seed).collect(),
        final_metrics,
        trajectories_to_all_modes: MeanStderr::of(&to_all),
        censored_runs: summaries
            .iter()
            .filter(|s| s.trajectories_to_all_modes.is_none())
            .count(),
    };
    write_json(&out_dir.join(AGGREGATE_JSON), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        assert_eq!(mean_stderr(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample sd = sqrt(5/3); stderr = sd / 2
        assert!((s - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "step,loss\n10,0.5\n").unwrap();
        let t = MetricTable::read(&path).unwrap();
        assert_eq!(t.column("loss").unwrap(), vec![0.5]);
        let msg = t.column("modes_frac").unwrap_err().to_string();
        assert!(msg.contains("`modes_frac`"), "{msg}");
    }
}
