//! `stepspec` command-line tool.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifest::Manifest;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 1.
    Config(String),
    /// Backend or I/O failure during the run; exit code 2.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stepspec", version, about = "Step-level speculative reasoning runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON manifest; every section is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the manifest.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite earlier outputs in `--out`.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every problem under each configured policy.
    Run {
        #[command(flatten)]
        common: Common,
        /// Number of episodes per policy; problems are reused in order.
        #[arg(long)]
        episodes: Option<usize>,
        /// Require the discrete-event clock (simulated backends only).
        #[arg(long)]
        virtual_clock: bool,
    },
    /// Replay a latency scenario under all four policies.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Acceptance and speedup across verifier thresholds.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the toy drafting policy.
    TrainToy {
        #[command(flatten)]
        common: Common,
    },
    /// Render a JSON Lines trace as a Gantt chart.
    TraceExport {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Run {
            common,
            episodes,
            virtual_clock,
        } => commands::run(commands::RunArgs {
            manifest: Manifest::load(common.config.as_deref())?,
            out: &common.out,
            force: common.force,
            seed: common.seed,
            episodes,
            virtual_clock,
        }),
        Command::Simulate { common } => commands::simulate(
            Manifest::load(common.config.as_deref())?,
            &common.out,
            common.force,
            common.seed,
        ),
        Command::SweepAlpha { common, episodes } => commands::sweep_alpha(
            Manifest::load(common.config.as_deref())?,
            &common.out,
            common.force,
            common.seed,
            episodes,
        ),
        Command::TrainToy { common } => commands::train_toy(
            Manifest::load(common.config.as_deref())?,
            &common.out,
            common.force,
            common.seed,
        ),
        Command::TraceExport { trace, out, force } => commands::trace_export(&trace, &out, force),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stepspec: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
