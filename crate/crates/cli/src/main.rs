use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlqmc_cli::{execute, CliError, Command, ExperimentConfig};

/// Multilevel quasi-Monte Carlo for parametric elliptic eigenvalue problems.
#[derive(Parser)]
#[command(name = "mlqmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the mode selected by `run.mode` in the config.
    Run(Common),
    /// Build or reuse the generating vectors of every level.
    Cbc(Common),
    /// Compare a multilevel estimate against tensor-quadrature and dense references.
    Validate(Common),
    /// Fit per-level variance and mean decay rates.
    Rates(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides MLQMC_OUT and run.output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides qmc.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.workers.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Run(a) => (Command::Run, a),
        Sub::Cbc(a) => (Command::Cbc, a),
        Sub::Validate(a) => (Command::Validate, a),
        Sub::Rates(a) => (Command::Rates, a),
    };
    match run(command, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command, args: &Common) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.qmc.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.run.workers = w;
    }
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os("MLQMC_OUT").map(PathBuf::from))
        .or_else(|| cfg.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mlqmc-out"));
    let outcome = execute(&cfg, command, &out)?;
    if let Some(est) = &outcome.estimate {
        println!(
            "{} = {} (stat_error {:e}, bias_estimate {:e}, levels {}, cost {:e})",
            est.quantity.name(),
            est.total,
            est.statistical_error,
            est.bias_estimate,
            est.levels.len(),
            est.cost_total
        );
    }
    for (rate, slope) in &outcome.rates {
        println!("{rate}: slope {slope:.4}");
    }
    println!(
        "cbc vectors built: {}, reused: {}; artifacts in {}",
        outcome.cbc_built,
        outcome.cbc_reused,
        outcome.out_dir.display()
    );
    Ok(())
}
