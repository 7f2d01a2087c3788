use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nonholo::scenario::{self, Overrides};

/// Integrates and diagnoses nonholonomic mechanical systems described by
/// scenario files.
#[derive(Parser)]
#[command(name = "nonholo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        file: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run every `*.cfg` scenario of a directory.
    Batch {
        dir: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// List the registered models.
    ListModels,
    /// Parse and validate a scenario file without running it.
    Check {
        file: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Args)]
struct Flags {
    /// Step size (fixed-step method).
    #[arg(long)]
    h: Option<f64>,
    /// Final time.
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Integration method: rk4 or adaptive.
    #[arg(long)]
    method: Option<String>,
    /// Project onto the constraint manifold after each step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    project: Option<bool>,
    /// Output CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Random seed for sampled diagnostics (falls back to NONHOLO_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Self {
        Overrides {
            h: f.h,
            t_end: f.t_end,
            method: f.method,
            project: f.project,
            csv: f.csv,
            report: f.report,
            seed: f.seed,
        }
    }
}

fn finish(code: i32, lines: &[String]) -> ExitCode {
    for l in lines {
        if code == scenario::EXIT_OK {
            println!("{l}");
        } else {
            eprintln!("{l}");
        }
    }
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { scenario::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match cli.command {
        Command::Run { file, flags } => {
            let (code, msg) = scenario::run_file(&file, &flags.into());
            finish(code, &[msg])
        }
        Command::Batch { dir, flags } => {
            let (code, msgs) = scenario::run_batch(&dir, &flags.into());
            finish(code, &msgs)
        }
        Command::ListModels => finish(scenario::EXIT_OK, &scenario::list_models()),
        Command::Check { file, flags } => {
            let (code, msg) = scenario::check_file(&file, &flags.into());
            finish(code, &[msg])
        }
    }
}
