use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dgfn_core::experiment::{
    cmd_oracle, cmd_plot_data, cmd_sweep, cmd_train, preset, preset_names, ExperimentConfig, SweepSpec,
};
use dgfn_core::{EnvError, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dgfn",
    version,
    about = "Train and evaluate GFlowNets with target-network sampling on the hypergrid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and aggregate them.
    Train {
        /// Experiment TOML file, or the name of a built-in preset.
        #[arg(long)]
        config: String,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Continue each seed from its newest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Cross lists of initial-phase lengths and update periods.
    Sweep {
        #[arg(long)]
        config: String,
        /// Comma-separated initial-phase lengths (T_I).
        #[arg(long, value_delimiter = ',', required = true)]
        ti: Vec<u64>,
        /// Comma-separated update periods (T_U).
        #[arg(long, value_delimiter = ',', required = true)]
        tu: Vec<u64>,
        /// Seeds per cell; defaults to the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Dump the target distribution, or a checkpoint's sampler distribution, as CSV.
    Oracle {
        #[arg(long)]
        config: String,
        /// Checkpoint directory whose online network should be tabulated.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export mode-fraction and L1 series from run or experiment directories.
    PlotData {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in presets.
    Presets {
        /// Also write each preset as `<name>.toml` into this directory.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

fn load_config(arg: &str) -> Result<ExperimentConfig, Error> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(p) = preset(arg) {
            return Ok(p);
        }
    }
    ExperimentConfig::load(path)
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidConfig(_) | Error::Env(EnvError::InvalidConfig(_))
    )
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train {
            config,
            seeds,
            resume,
        } => {
            let config = load_config(&config)?;
            let report = cmd_train(&config, seeds.as_deref(), resume)?;
            for r in &report.runs {
                let last = r.final_record.as_ref();
                println!(
                    "seed {}: steps {} modes {}/{} l1 {} oracle_l1 {}",
                    r.seed,
                    r.steps,
                    r.modes_found,
                    r.modes_total,
                    fmt_opt(last.and_then(|m| m.l1)),
                    fmt_opt(last.and_then(|m| m.oracle_l1)),
                );
            }
            println!("results in {}", report.experiment_dir.display());
        }
        Command::Sweep {
            config,
            ti,
            tu,
            seeds,
        } => {
            let config = load_config(&config)?;
            let spec = SweepSpec {
                initial_phases: ti,
                update_periods: tu,
                seeds: seeds.unwrap_or_else(|| config.seeds.clone()),
            };
            let report = cmd_sweep(&config, &spec)?;
            for c in &report.cells {
                match &c.error {
                    Some(e) => println!("T_I={} T_U={}: failed: {e}", c.initial_phase, c.update_period),
                    None => println!(
                        "T_I={} T_U={}: modes {} l1 {}",
                        c.initial_phase,
                        c.update_period,
                        fmt_opt(c.modes_frac.map(|v| v.mean)),
                        fmt_opt(c.l1.map(|v| v.mean)),
                    ),
                }
            }
            match report.best {
                Some(i) => {
                    let b = &report.cells[i];
                    println!("best: T_I={} T_U={}", b.initial_phase, b.update_period);
                }
                None => return Err(Error::Metric("every sweep cell failed".into())),
            }
        }
        Command::Oracle {
            config,
            checkpoint,
            out,
        } => {
            let config = load_config(&config)?;
            match out {
                Some(path) => {
                    let file = File::create(&path).map_err(|e| Error::Io {
                        context: format!("creating {}", path.display()),
                        source: e,
                    })?;
                    cmd_oracle(&config, checkpoint.as_deref(), BufWriter::new(file))?;
                }
                None => cmd_oracle(&config, checkpoint.as_deref(), io::stdout().lock())?,
            }
        }
        Command::PlotData { runs, out } => {
            let report = cmd_plot_data(&runs, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("series: {}", report.series.join(", "));
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Presets { write } => {
            let mut out = io::stdout().lock();
            for name in preset_names() {
                if let (Some(dir), Some(config)) = (&write, preset(&name)) {
                    let path = dir.join(format!("{name}.toml"));
                    std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(&path, config.to_toml()))
                        .map_err(|e| Error::Io {
                            context: format!("writing {}", path.display()),
                            source: e,
                        })?;
                }
                let _ = writeln!(out, "{name}");
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_config_error(&e) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
