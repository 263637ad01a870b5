use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod apply;
mod config;
mod fit;
mod output;
mod plot;
mod simulate;

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] erc_core::ErcError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("plot error: {0}")]
    Plot(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "erc",
    version,
    about = "Exposure-response curve simulations and analyses"
)]
struct Cli {
    #[command(flatten)]
    flags: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario grid and write per-cell metrics.
    Simulate {
        /// Replicates per cell.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Fit the estimators to one dataset.
    Fit {
        /// CSV with `exposure`, `outcome` and covariate columns.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        replicate: Option<usize>,
    },
    /// Analyse aggregated rate data.
    Apply {
        /// Aggregated records CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Bootstrap replicates; 0 skips the bands.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Render figures from the result files of an output directory.
    Plot {
        /// Directory holding the result files; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut cfg = RunConfig::resolve(&cli.flags)?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { replicates } => {
            if let Some(r) = replicates {
                cfg.simulation.replicates = r;
            }
            let outcome = simulate::run(&cfg)?;
            for cell in &outcome.empty_cells {
                eprintln!("{cell}: no estimator produced a curve");
            }
            println!(
                "{} cells written to {}",
                outcome.results.len(),
                cfg.out_dir().display()
            );
            Ok(outcome.empty_cells.is_empty())
        }
        Command::Fit { data, replicate } => {
            if data.is_some() {
                cfg.fit.data = data;
            }
            if let Some(r) = replicate {
                cfg.fit.replicate = r;
            }
            let ok = fit::run(&cfg)?;
            println!(
                "{ok} of {} estimators fitted",
                cfg.simulation.estimators.len()
            );
            Ok(ok > 0)
        }
        Command::Apply {
            data,
            bootstrap,
            reference,
        } => {
            if data.is_some() {
                cfg.application.data = data;
            }
            if let Some(b) = bootstrap {
                cfg.application.settings.bootstrap_replicates = b;
            }
            if let Some(r) = reference {
                cfg.application.settings.reference = r;
            }
            let d = apply::run(&cfg)?;
            let ok = d.estimators.iter().filter(|r| r.status == "ok").count();
            println!("{ok} of {} estimators fitted", d.estimators.len());
            Ok(ok > 0)
        }
        Command::Plot { input } => {
            let out = cfg.out_dir();
            let dir = input.unwrap_or_else(|| out.clone());
            for p in plot::emit_plots(&dir, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
