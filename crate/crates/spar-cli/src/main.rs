//! Batch front end for the SPAR multivariate extremes pipeline.
//!
//! Subcommands: `fit`, `diagnose`, `probs`, `bootstrap`, `synth`. Every
//! command reads a TOML configuration (`--config`), accepts flag overrides,
//! and writes deterministic outputs derived from one master seed. Exit
//! codes: 0 success, 1 runtime failure, 2 usage error, 65 malformed input
//! data.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use spar_core::SparError;

use crate::commands::ChiScope;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "spar", version, about = "Angular-radial joint tail modelling of multivariate block maxima")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Joint-tail Monte Carlo sample size override.
    #[arg(long, global = true)]
    m_tail: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model per (window, member-subsample) cell.
    Fit {
        /// Restrict to one window label, e.g. "1980-2009".
        #[arg(long)]
        window: Option<String>,
        /// Restrict to the first K ensemble members.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Emit goodness-of-fit CSVs for a fitted model.
    Diagnose {
        /// Model file produced by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Window label of the observations to compare against.
        #[arg(long)]
        window: Option<String>,
        /// Rows entering the χ(u) comparison: "tail" or "full".
        #[arg(long, default_value = "tail")]
        chi_scope: String,
    },
    /// Estimate sum-threshold and joint box tail probabilities.
    Probs {
        #[arg(long)]
        model: PathBuf,
    },
    /// Bootstrap refits with percentile confidence intervals.
    Bootstrap {
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        members: Option<usize>,
        /// Number of bootstrap replicates.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Also write each replicate model file.
        #[arg(long)]
        save_replicates: bool,
    },
    /// Generate a synthetic weekly series in the input CSV schema.
    Synth {
        #[arg(long)]
        out_file: PathBuf,
        #[arg(long, default_value_t = 600)]
        weeks: usize,
        #[arg(long, default_value_t = 4)]
        members: usize,
        #[arg(long, default_value_t = 4)]
        sites: usize,
        /// Equicorrelation of the Gaussian copula.
        #[arg(long, default_value_t = 0.6)]
        rho: f64,
        #[arg(long, default_value_t = 2000)]
        start_year: i32,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(m_tail) = cli.m_tail {
        cfg.m_tail = m_tail;
    }
    match cli.command {
        Command::Fit { window, members } => commands::cmd_fit(&cfg, window.as_deref(), members),
        Command::Diagnose { model, window, chi_scope } => {
            let scope = match chi_scope.as_str() {
                "tail" => ChiScope::Tail,
                "full" => ChiScope::Full,
                other => anyhow::bail!("unknown chi scope '{other}' (expected 'tail' or 'full')"),
            };
            commands::cmd_diagnose(&cfg, &model, window.as_deref(), scope)
        }
        Command::Probs { model } => commands::cmd_probs(&cfg, &model),
        Command::Bootstrap { window, members, bootstrap, save_replicates } => {
            commands::cmd_bootstrap(&cfg, window.as_deref(), members, bootstrap, save_replicates)
        }
        Command::Synth { out_file, weeks, members, sites, rho, start_year } => {
            commands::cmd_synth(&out_file, weeks, members, sites, rho, start_year, cfg.seed)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        let is_parse = err
            .chain()
            .any(|c| matches!(c.downcast_ref::<SparError>(), Some(SparError::Parse { .. })));
        std::process::exit(if is_parse { 65 } else { 1 });
    }
}
