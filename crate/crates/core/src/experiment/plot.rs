//! Plot-ready series: mode fraction and L1 against trajectories sampled,
//! one series per algorithm label with mean and standard-error bands.

use std::fs;
use std::path::{Path, PathBuf};

use crate::Error;

use super::aggregate::{common_hash, mean_stderr, MetricTable};
use super::runner::{read_summary, RunSummary, METRICS_CSV, SUMMARY_JSON};

pub const MODES_CSV: &str = "modes.csv";
pub const L1_CSV: &str = "l1.csv";

/// Panels and the metric column each one plots.
const PANELS: [(&str, &str); 2] = [(MODES_CSV, "modes_frac"), (L1_CSV, "l1")];

#[derive(Clone, Debug, PartialEq)]
pub struct PlotReport {
    pub series: Vec<String>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct Run {
    summary: RunSummary,
    x: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

impl Run {
    fn cadence(&self) -> f64 {
        match self.x.as_slice() {
            [a, b, ..] => b - a,
            [a] => *a,
            [] => 0.0,
        }
    }

    /// Value of the last row at or before `x`.
    fn at(&self, panel: usize, x: f64) -> f64 {
        let idx = self.x.partition_point(|&v| v <= x);
        self.columns[panel][idx.saturating_sub(1)]
    }
}

/// Run directories under `path`: itself if it holds a summary, else its
/// `seed-*` children in name order.
pub fn expand_run_dirs(path: &Path) -> Result<Vec<PathBuf>, Error> {
    if path.join(SUMMARY_JSON).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(format!("listing {}", path.display()), e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("seed-"))
                && p.join(SUMMARY_JSON).is_file()
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Metric(format!(
            "{} contains no finished runs",
            path.display()
        )));
    }
    Ok(dirs)
}

fn load_run(dir: &Path) -> Result<Run, Error> {
    let summary = read_summary(dir)?;
    let table = MetricTable::read(&dir.join(METRICS_CSV))?;
    let x = table.column("trajectories")?;
    let columns = PANELS
        .iter()
        .map(|(_, col)| table.column(col))
        .collect::<Result<Vec<_>, _>>()?;
    if x.is_empty() {
        return Err(Error::Metric(format!("{} has no metric rows", dir.display())));
    }
    Ok(Run { summary, x, columns })
}

/// Write `modes.csv` and `l1.csv` into `out` from the given run or experiment directories.
pub fn cmd_plot_data(paths: &[PathBuf], out: &Path) -> Result<PlotReport, Error> {
    let mut groups: Vec<(String, Vec<Run>)> = Vec::new();
    for path in paths {
        for dir in expand_run_dirs(path)? {
            let run = load_run(&dir)?;
            match groups.iter_mut().find(|(label, _)| *label == run.summary.label) {
                Some((_, runs)) => runs.push(run),
                None => groups.push((run.summary.label.clone(), vec![run])),
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Metric("no runs given".into()));
    }
    let mut hashes = Vec::new();
    for (_, runs) in &groups {
        let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
        hashes.push(common_hash(&summaries)?);
    }

    let all_runs = || groups.iter().flat_map(|(_, runs)| runs.iter());
    let coarse = all_runs().map(Run::cadence).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if all_runs().any(|r| r.cadence() != coarse) {
        let msg = format!("runs log at different cadences; resampling to every {coarse} trajectories");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let end = all_runs()
        .map(|r| *r.x.last().expect("non-empty"))
        .fold(f64::INFINITY, f64::min);
    let mut grid = Vec::new();
    let mut x = coarse;
    while x <= end && coarse > 0.0 {
        grid.push(x);
        x += coarse;
    }

    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut files = Vec::new();
    for (panel, (file, _)) in PANELS.iter().enumerate() {
        let mut text = String::from("series,config_hash,trajectories,mean,stderr,n\n");
        for ((label, runs), hash) in groups.iter().zip(&hashes) {
            for &x in &grid {
                let values: Vec<f64> = runs.iter().map(|r| r.at(panel, x)).collect();
                let (m, s) = mean_stderr(&values);
                text.push_str(&format!("{label},{hash},{x},{m},{s},{}\n", runs.len()));
            }
        }
        let path = out.join(file);
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        files.push(path);
    }
    Ok(PlotReport {
        series: groups.into_iter().map(|(l, _)| l).collect(),
        files,
        warnings,
    })
}
