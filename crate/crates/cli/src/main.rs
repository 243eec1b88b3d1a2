use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use datesort::{execute, CliError, Command, Invocation, RunConfig};

#[derive(Parser)]
#[command(name = "datesort", version, about = "Synthetic date-fruit grading pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset.
    Gen(Common),
    /// Train the network on the training split.
    Train(Common),
    /// Search hyperparameters and feature masks, then retrain the best genome.
    Evolve(Common),
    /// Paired adaptive / frozen conveyor runs.
    Simulate(Common),
    /// Score the trained model on the held-out split.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a non-empty stage directory.
    #[arg(long)]
    force: bool,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory (default `<out>/dataset`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model file (default `<out>/train/model.json`).
    #[arg(long)]
    model: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Cmd::Gen(a) => (Command::Gen, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Evolve(a) => (Command::Evolve, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Eval(a) => (Command::Eval, a),
    };
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.out = out;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let inv = Invocation {
        command,
        config,
        force: args.force,
        dataset: args.dataset,
        model: args.model,
    };
    let manifest = execute(&inv)?;
    println!(
        "{}: wrote {} files to {} in {:.1}s",
        manifest.command,
        manifest.files.len() + 1,
        inv.stage_path().display(),
        manifest.wall_clock_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
