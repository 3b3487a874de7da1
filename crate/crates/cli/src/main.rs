use clap::{Parser, Subcommand};

use nuc_cli::commands::{
    cmd_evaluate, cmd_replay, cmd_restore, cmd_simulate, cmd_sweep_k, configure_threads, EvaluateArgs, ReplayArgs,
    RestoreArgs, SimulateArgs, SweepArgs,
};
use nuc_cli::CliResult;

/// Scene-based nonuniformity correction for thermal image sequences.
#[derive(Debug, Parser)]
#[command(name = "nuc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (truth/, obs/, masks/).
    Simulate(SimulateArgs),
    /// Estimate scenes, gain, offset and homographies from obs/.
    Restore(RestoreArgs),
    /// Score restored results against ground truth.
    Evaluate(EvaluateArgs),
    /// Mean Pearson and RMSE over repeated runs for several k.
    SweepK(SweepArgs),
    /// Re-run a manifest and verify its checksums.
    Replay(ReplayArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => {
            cmd_simulate(&a)?;
        }
        Command::Restore(a) => {
            cmd_restore(&a)?;
        }
        Command::Evaluate(a) => print!("{}", cmd_evaluate(&a)?.to_text()),
        Command::SweepK(a) => print!("{}", cmd_sweep_k(&a)?.to_text()),
        Command::Replay(a) => println!("replay ok: {} files identical", cmd_replay(&a)?),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
