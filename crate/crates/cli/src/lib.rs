//! Command-line driver for relay-weight optimization, protocol simulation,
//! bound evaluation and trace summaries.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use colrel::analysis::SlopeWindow;

pub use config::{parse_config, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "colrel", version, about = "Collaborative relaying for federated learning over intermittent uplinks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `experiment.output`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Use seeds 0..K instead of the configured ones.
    #[arg(long, global = true, value_name = "K")]
    pub seeds: Option<u64>,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true, value_name = "K")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize relay weights and write the matrix with its S history.
    OptimizeWeights,
    /// Run every configured variant over every seed and write traces.
    Simulate,
    /// Evaluate the convergence-bound constants and the bound.
    Bound,
    /// Repeat `simulate` across the values of the `[sweep]` axis.
    Sweep,
    /// Aggregate trace files in the output directory across seeds.
    Summarize {
        /// Inclusive round range FROM:TO for the slope fit (default: final decade).
        #[arg(long, value_name = "FROM:TO")]
        window: Option<String>,
    },
}

fn load(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --config <path>".into()))?;
    let mut cfg = config::load_config(path)?;
    if let Some(k) = common.seeds {
        if k == 0 {
            return Err(CliError::Usage("--seeds must be at least 1".into()));
        }
        cfg.set_seed_count(k);
    }
    Ok(cfg)
}

fn out_dir(common: &CommonArgs, cfg: Option<&RunConfig>) -> PathBuf {
    match (&common.out, cfg) {
        (Some(dir), _) => dir.clone(),
        (None, Some(cfg)) => Path::new(&cfg.experiment.output).to_path_buf(),
        (None, None) => PathBuf::from("out"),
    }
}

/// Runs one parsed invocation and returns its report for standard output.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(k) = cli.common.jobs {
            if k == 0 {
                return Err(CliError::Usage("--jobs must be at least 1".into()));
            }
            b = b.num_threads(k);
        }
        b.build().map_err(|e| CliError::Usage(e.to_string()))?
    };
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    let common = &cli.common;
    match &cli.command {
        Command::Summarize { window } => {
            let cfg = match common.config {
                Some(_) => Some(load(common)?),
                None => None,
            };
            let window = match window {
                Some(w) => commands::parse_window(w)?,
                None => SlopeWindow::FinalDecade,
            };
            commands::summarize_cmd(&out_dir(common, cfg.as_ref()), window)
        }
        command => {
            let cfg = load(common)?;
            let out = out_dir(common, Some(&cfg));
            match command {
                Command::OptimizeWeights => commands::optimize_weights_cmd(&cfg, &out),
                Command::Simulate => commands::simulate_cmd(&cfg, &out),
                Command::Bound => commands::bound_cmd(&cfg, &out),
                Command::Sweep => commands::sweep_cmd(&cfg, &out),
                Command::Summarize { .. } => unreachable!(),
            }
        }
    }
}
