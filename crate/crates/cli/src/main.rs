mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::RunConfig;

/// Latent-ODE reconciliation of multi-rate smart-meter and SCADA data.
#[derive(Debug, Parser)]
#[command(name = "gridlode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a feeder day and write the multi-rate dataset and its truth.
    Generate(Common),
    /// Train a model (or resume one) on the non-held-out records.
    Train(Common),
    /// Reconstruct records on a fine time grid.
    Impute(Common),
    /// Condition on the first part of the day and extrapolate the rest.
    Predict(Common),
    /// Score imputation and prediction on held-out nodes against the truth.
    Evaluate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from (train) or to load (other commands).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = ["backprop", "adjoint"])]
    grad_mode: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(ck) = &self.checkpoint {
            cfg.checkpoint = Some(ck.clone());
        }
        if let Some(mode) = &self.grad_mode {
            cfg.set("grad_mode", mode)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => c.resolve().and_then(|cfg| commands::generate_cmd(&cfg)),
        Command::Train(c) => c.resolve().and_then(|cfg| commands::train_cmd(&cfg)),
        Command::Impute(c) => c.resolve().and_then(|cfg| commands::impute_cmd(&cfg)),
        Command::Predict(c) => c.resolve().and_then(|cfg| commands::predict_cmd(&cfg)),
        Command::Evaluate(c) => c.resolve().and_then(|cfg| commands::evaluate_cmd(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
