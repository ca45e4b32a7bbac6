use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::exit;
use config::Overrides;

/// Mann iteration runs, rate certification, sweeps and inequality checks
/// for strict pseudo-contractions.
#[derive(Parser)]
#[command(name = "regula", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate and write the trace CSV and a summary.
    Run(Common),
    /// Certify the residual rate; exit 0 iff the bound and all hypotheses hold.
    Certify(Common),
    /// Tabulate Φ, empirical index and tightness over eps and lambda grids.
    Sweep(Common),
    /// Run every numerical check; exit 5 if any fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check a trace CSV (e.g. hand-edited) instead of running the suite.
        #[arg(long, conflicts_with = "config")]
        trace: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (strict JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; falls back to the config, then REGULA_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated eps values.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// One value sets a constant schedule; several form the sweep grid.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Claimed strictness constant.
    #[arg(long)]
    kappa: Option<f64>,
    /// Override the operator dimension.
    #[arg(long)]
    dim: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<config::Resolved> {
        let path = self.config.as_ref().context("--config is required")?;
        let cfg = config::load(path)?;
        let ov = Overrides {
            seed: self.seed,
            eps: self.eps.clone(),
            lambda: self.lambda.clone(),
            kappa: self.kappa,
            dim: self.dim,
            out: self.out.clone(),
        };
        let resolved = config::resolve(cfg, &ov)?;
        for w in &resolved.warnings {
            eprintln!("warning: {w}");
        }
        Ok(resolved)
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run(c) => commands::run(&c.resolve()?),
        Command::Certify(c) => commands::certify_cmd(&c.resolve()?),
        Command::Sweep(c) => commands::sweep(&c.resolve()?),
        Command::Verify { common, trace: Some(t) } => {
            let out = common.out.unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT_DIR));
            commands::verify_trace(&t, &out)
        }
        Command::Verify { common, trace: None } => commands::verify(&common.resolve()?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::CONFIG)
        }
    }
}
