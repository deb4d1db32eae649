use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use infoflow::config::{Defaults, RunConfig};
use infoflow::pipeline::{self, GenerateArgs};
use infoflow::{Error, Result};

#[derive(Parser)]
#[command(name = "infoflow", version, about = "Transfer-entropy driver selection and direction classification")]
struct Cli {
    /// TOML configuration; unset keys take the default set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default set: `paper` or `smoke`.
    #[arg(long, global = true)]
    defaults: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean the input panel into returns; write statistics and correlations.
    Prep,
    /// Recompute statistics and correlations of the prepared panel.
    Stats,
    /// Transfer-entropy grid search and significance test for every driver.
    Select,
    /// Train the design x scenario x hyperparameter grid.
    Train,
    /// Score the saved checkpoints on validation and test.
    Evaluate,
    /// Summary report from the run ledger.
    Report,
    /// Write a synthetic price panel with one coupled driver.
    Generate {
        #[arg(long, default_value_t = 0.8)]
        coupling: f64,
        #[arg(long, default_value_t = 2)]
        noise_drivers: usize,
        #[arg(long, default_value_t = 1000)]
        returns: usize,
        #[arg(long, default_value = "2017-01-01")]
        start: String,
        /// Destination file (default: OUT/synthetic.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let defaults = cli.defaults.as_deref().map(str::parse::<Defaults>).transpose()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, defaults)?,
        None => RunConfig::defaults(defaults.unwrap_or(Defaults::Paper)),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    let cfg = config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    if let Command::Generate { coupling, noise_drivers, returns, start, output } = &cli.command {
        let start = NaiveDate::parse_from_str(start, "%Y-%m-%d").map_err(|e| Error::Config(format!("--start: {e}")))?;
        let args = GenerateArgs { coupling: *coupling, noise_drivers: *noise_drivers, returns: *returns, start, output: output.clone() };
        return pipeline::cmd_generate(&cfg, &args);
    }
    cfg.validate()?;
    pipeline::write_effective_config(&cfg)?;
    match cli.command {
        Command::Prep => pipeline::cmd_prep(&cfg),
        Command::Stats => pipeline::cmd_stats(&cfg),
        Command::Select => pipeline::cmd_select(&cfg),
        Command::Train => pipeline::cmd_train(&cfg),
        Command::Evaluate => pipeline::cmd_evaluate(&cfg),
        Command::Report => pipeline::cmd_report(&cfg),
        Command::Generate { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
