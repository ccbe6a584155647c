use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gossip_dsa::cli::{cmd_analyze, cmd_design, cmd_rate, cmd_simulate, CliError, CommandOutput, Experiment, Overrides};

/// Broadcast-gossip distributed stochastic approximation toolkit.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design clock probabilities or mixing weights for a target.
    Design(Common),
    /// Run replicated simulations and write traces.
    Simulate(Common),
    /// Predict and measure the asymptotic normalized-error covariance.
    Rate(Common),
    /// Stationary-vector and product-decay diagnostics.
    Analyze(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications, overriding the config.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<CommandOutput, CliError> {
    let (common, command): (&Common, fn(&Experiment) -> Result<CommandOutput, CliError>) = match &cli.command {
        Command::Design(c) => (c, cmd_design),
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Rate(c) => (c, cmd_rate),
        Command::Analyze(c) => (c, cmd_analyze),
    };
    let overrides = Overrides { seed: common.seed, reps: common.reps, out: common.out.clone() };
    let exp = Experiment::load(&common.config, &overrides)?;
    command(&exp)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(output) => {
            for (k, v) in &output.summary {
                println!("{k} = {v}");
            }
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
