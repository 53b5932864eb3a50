use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use drpp_cli::commands::{
    cmd_bounds, cmd_predict, cmd_reproduce, cmd_simulate, resolve_output_dir,
};
use drpp_cli::config::ExperimentConfig;
use drpp_cli::CliError;

/// Distributionally robust probabilistic prediction for stochastic
/// dynamical systems.
#[derive(Parser)]
#[command(name = "drpp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the offline worst-case value bounds for a configuration
    Bounds { config: PathBuf },
    /// Run the configured Monte-Carlo experiment and emit its artifacts
    Simulate { config: PathBuf },
    /// Run the bundled six-cell reference study
    /// (LTI/LTV/adversarial mechanisms under zero and LQR control)
    #[command(name = "reproduce-paper")]
    ReproducePaper {
        /// Output directory for the per-cell summaries and combined report
        #[arg(long, default_value = "reproduction")]
        out: PathBuf,
        /// Master seed for the trajectory streams
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Emit the predictive pdfs for a single state-control pair
    Predict {
        config: PathBuf,
        /// State vector, comma separated (e.g. --state 2,1)
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        state: Vec<f64>,
        /// Control vector, comma separated (e.g. --control 0,0)
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        control: Vec<f64>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::parse(&text)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bounds { config } => {
            let config = load_config(&config)?;
            let out_dir = resolve_output_dir(&config.output_dir);
            let report = cmd_bounds(&config, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate { config } => {
            let config = load_config(&config)?;
            let out_dir = resolve_output_dir(&config.output_dir);
            cmd_simulate(&config, &out_dir)?;
            println!(
                "{}",
                json!({
                    "status": "ok",
                    "output_dir": out_dir,
                    "files": ["trajectories.csv", "summary.csv", "ellipses.json", "verdict.json"],
                })
            );
        }
        Command::ReproducePaper { out, seed } => {
            let out_dir = match std::env::var(drpp_cli::commands::OUTPUT_DIR_ENV) {
                Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
                _ => out,
            };
            let report = cmd_reproduce(&out_dir, seed)?;
            println!(
                "{}",
                json!({
                    "status": "ok",
                    "output_dir": out_dir,
                    "seed": seed,
                    "cells": report.cells.keys().collect::<Vec<_>>(),
                })
            );
        }
        Command::Predict {
            config,
            state,
            control,
        } => {
            let config = load_config(&config)?;
            let value = cmd_predict(&config, &state, &control)?;
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            println!(
                "{}",
                json!({
                    "error": {
                        "kind": e.kind(),
                        "message": e.to_string(),
                        "exit_code": e.exit_code(),
                    }
                })
            );
            ExitCode::from(e.exit_code())
        }
    }
}
