//! Command-line front end.
//!
//! ```text
//! root-embed <solve|simulate|verify|optimality|full> --config problem.cfg
//! ```
//!
//! Exit codes separate the two ways a run can go wrong so scripts can
//! react differently:
//!
//! * `0` — requested stages ran and every gated check passed;
//! * `1` — the input was invalid (command line or config file);
//! * `2` — the input was fine but a numerical stage errored or a
//!   diagnostic gate failed.
//!
//! The master seed resolves with precedence `--seed` over the
//! `ROOT_EMBED_SEED` environment variable over the config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use root_embed::config::load_config;
use root_embed::pipeline::{run_subcommand, PipelineError, Stage};

#[derive(Parser)]
#[command(
    name = "root-embed",
    version,
    about = "Construct and verify Root-barrier Skorokhod embeddings for 1-D diffusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the variational inequality and write the barrier artifacts.
    Solve(RunArgs),
    /// Solve, then run the stopped-diffusion Monte Carlo.
    Simulate(RunArgs),
    /// Solve, simulate, then verify the embedded law and minimality.
    Verify(RunArgs),
    /// Verify, then run the payoff-optimality checks.
    Optimality(RunArgs),
    /// All stages.
    Full(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem description in the sectioned key=value format.
    #[arg(long)]
    config: PathBuf,
    /// Write artifacts here instead of the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the path count for both the barrier run and the
    /// benchmark run.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the master seed (takes precedence over ROOT_EMBED_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(self) -> (Stage, RunArgs) {
        match self {
            Command::Solve(a) => (Stage::Solve, a),
            Command::Simulate(a) => (Stage::Simulate, a),
            Command::Verify(a) => (Stage::Verify, a),
            Command::Optimality(a) => (Stage::Optimality, a),
            Command::Full(a) => (Stage::Full, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive as "errors" but are successful
            // outcomes; everything else is invalid input.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (stage, args) = cli.command.split();

    let mut cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir;
    }
    if let Some(n) = args.paths {
        cfg.sim.n_paths = n;
        cfg.opt.alt_paths = n;
    }
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    } else if let Ok(raw) = std::env::var("ROOT_EMBED_SEED") {
        match raw.trim().parse::<u64>() {
            Ok(seed) => cfg.sim.seed = seed,
            Err(_) => {
                eprintln!("config: ROOT_EMBED_SEED must be an unsigned integer, got {raw:?}");
                return ExitCode::from(1);
            }
        }
    }

    match run_subcommand(stage, &cfg) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.pass {
                println!("result: PASS");
                ExitCode::SUCCESS
            } else {
                println!("result: FAIL");
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            match e {
                PipelineError::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
