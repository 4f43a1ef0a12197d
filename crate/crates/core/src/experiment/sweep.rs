use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::Error;

use super::aggregate::MeanStderr;
use super::runner::{train_in, write_json};
use super::ExperimentConfig;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const BEST_JSON: &str = "best.json";

/// Grid of target-update schedules to cross.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub initial_phases: Vec<u64>,
    pub update_periods: Vec<u64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.initial_phases.is_empty() {
            return Err(Error::InvalidConfig("ti: list must not be empty".into()));
        }
        if self.update_periods.is_empty() {
            return Err(Error::InvalidConfig("tu: list must not be empty".into()));
        }
        if self.update_periods.contains(&0) {
            return Err(Error::InvalidConfig("tu: periods must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds: must not be empty".into()));
        }
        Ok(())
    }

    /// Cells in row-major order over `(T_I, T_U)`.
    pub fn cells(&self) -> Vec<(u64, u64)> {
        self.initial_phases
            .iter()
            .flat_map(|&ti| self.update_periods.iter().map(move |&tu| (ti, tu)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub initial_phase: u64,
    pub update_period: u64,
    pub dir: PathBuf,
    pub config_hash: String,
    /// `None` when the cell completed; otherwise the failure message.
    pub error: Option<String>,
    pub modes_frac: Option<MeanStderr>,
    /// Exact sampler L1 when available, else the windowed estimate.
    pub l1: Option<MeanStderr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Index of the best completed cell.
    pub best: Option<usize>,
}

/// Highest final mode fraction, ties broken by the lower final L1, then by order.
pub fn best_cell(cells: &[SweepCell]) -> Option<usize> {
    let key = |c: &SweepCell| {
        let l1 =
            c.l1.map(|v| v.mean)
                .filter(|v| !v.is_nan())
                .unwrap_or(f64::INFINITY);
        (c.modes_frac.map(|v| v.mean).unwrap_or(f64::NEG_INFINITY), l1)
    };
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.error.is_some() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (fa, la) = key(c);
                let (fb, lb) = key(&cells[b]);
                fa > fb || (fa == fb && la < lb)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Train every cell of `spec`; failed cells are recorded and skipped.
pub fn cmd_sweep(config: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepReport, Error> {
    spec.validate()?;
    let root = config.experiment_dir().join("sweep");
    let mut cells = Vec::new();
    for (ti, tu) in spec.cells() {
        let mut cell_config = config.clone();
        cell_config.trainer.initial_phase = ti;
        cell_config.trainer.update_period = tu;
        let dir = root.join(format!("ti-{ti}_tu-{tu}"));
        let config_hash = cell_config.config_hash();
        let mut cell = SweepCell {
            initial_phase: ti,
            update_period: tu,
            dir: dir.clone(),
            config_hash,
            error: None,
            modes_frac: None,
            l1: None,
        };
        match cell_config
            .validate()
            .and_then(|_| train_in(&cell_config, &dir, &spec.seeds, false))
        {
            Ok(report) => {
                let m = &report.aggregate.final_metrics;
                cell.modes_frac = m.get("modes_frac").copied();
                cell.l1 = m.get("oracle_l1").or_else(|| m.get("l1")).copied();
            }
            Err(e) => {
                log::warn!("sweep cell T_I={ti} T_U={tu} failed: {e}");
                cell.error = Some(e.to_string());
            }
        }
        cells.push(cell);
    }
    let best = best_cell(&cells);
    let report = SweepReport { cells, best };
    write_sweep(&root, &report)?;
    Ok(report)
}

fn write_sweep(root: &std::path::Path, report: &SweepReport) -> Result<(), Error> {
    fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
    let mut text = String::from(
        "config_hash,initial_phase,update_period,status,modes_frac_mean,modes_frac_stderr,l1_mean,l1_stderr\n",
    );
    let fmt = |v: Option<MeanStderr>| match v {
        Some(v) => format!("{},{}", v.mean, v.stderr),
        None => ",".to_string(),
    };
    for c in &report.cells {
        let status = if c.error.is_some() { "failed" } else { "ok" };
        text.push_str(&format!(
            "{},{},{},{status},{},{}\n",
            c.config_hash,
            c.initial_phase,
            c.update_period,
            fmt(c.modes_frac),
            fmt(c.l1)
        ));
    }
    let path = root.join(SWEEP_CSV);
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    write_json(&root.join(BEST_JSON), report)
}
