use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dpsecmul::experiments;
use dpsecmul::{ConfigSources, Experiment, ExperimentConfig};

/// Privacy/accuracy experiments for noisy secure multiplication.
#[derive(Parser, Debug)]
#[command(name = "dpsecmul", version)]
struct Cli {
    /// Base seed; defaults to $DPSECMUL_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Privacy-accuracy curves of the optimal scheme and two baselines.
    Tradeoff,
    /// Gap to the trade-off bound of layered codes as alpha shrinks.
    Gap,
    /// Converse check over random codes with N <= 2t.
    Converse,
    /// Bits per node against target excess MSE.
    Precision,
    /// Entrywise matrix-product extension.
    Matrix,
    /// Full analysis of a scheme JSON file.
    Eval { scheme: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (experiment, scheme) = match cli.command {
        Command::Tradeoff => (Experiment::Tradeoff, None),
        Command::Gap => (Experiment::Gap, None),
        Command::Converse => (Experiment::Converse, None),
        Command::Precision => (Experiment::Precision, None),
        Command::Matrix => (Experiment::Matrix, None),
        Command::Eval { scheme } => (Experiment::Eval, Some(scheme)),
    };
    let sources = ConfigSources {
        file: cli.config,
        sets: cli.sets,
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        ..ConfigSources::from_env()
    };
    let cfg = ExperimentConfig::resolve(experiment, &sources)?;
    let report = experiments::run(&cfg, scheme.as_deref())?;
    match cfg.output_path() {
        Some(path) => std::fs::write(path, &report.body)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", report.body),
    }
    for c in &report.checks {
        let tag = if c.pass { "ok" } else { "FAILED" };
        eprintln!("check {tag}: {} {}", c.name, c.detail);
    }
    Ok(report.all_pass())
}
