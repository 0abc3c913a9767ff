use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trn_ood::harness::{cmd_eval, cmd_gen_shifts, cmd_selfcheck, cmd_train};
use trn_ood::{Experiment, HarnessError};

#[derive(Parser)]
#[command(name = "trn-ood", version, about = "OOD detection benchmark on text-rich networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Ignore config hash mismatches against existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist every (shift, seed) split.
    GenShifts(Common),
    /// Train the detector and baseline models per seed.
    Train(Common),
    /// Score every split and write metric reports.
    Eval(Common),
    /// Run gradient, metric and determinism checks.
    Selfcheck {
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let load = |c: &Common| Experiment::load(&c.config, c.out.as_deref(), c.seeds.as_deref());
    match cli.command {
        Command::GenShifts(c) => {
            let m = cmd_gen_shifts(&load(&c)?)?;
            println!("wrote {} split(s), config hash {}", m.splits.len(), m.config_hash);
        }
        Command::Train(c) => {
            let idx = cmd_train(&load(&c)?, c.force)?;
            println!("trained {} model set(s)", idx.models.len());
        }
        Command::Eval(c) => {
            let s = cmd_eval(&load(&c)?, c.force)?;
            for n in &s.skipped {
                println!("skipped {}: {}", n.split, n.reason);
            }
            println!("wrote {} run(s)", s.runs);
        }
        Command::Selfcheck { .. } => {
            cmd_selfcheck()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
