mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::Failure;

#[derive(Debug, Parser)]
#[command(name = "sse", version, about = "Self-supervised speech enhancement toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Single-threaded, bitwise-reproducible execution.
    #[arg(long, global = true)]
    pub strict_deterministic: bool,
    /// Validate configuration and inputs, then exit without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition a manifest into disjoint clean, mix and test segments.
    Split(commands::SplitArgs),
    /// Mix speech with noise at the given SNRs.
    Mix(commands::MixArgs),
    /// Train the clean-speech autoencoder.
    TrainCae(commands::TrainCaeArgs),
    /// Train the mixture autoencoder against a frozen clean-speech autoencoder.
    TrainMae(commands::TrainMaeArgs),
    /// Enhance every WAV file in a directory.
    Enhance(commands::EnhanceArgs),
    /// Spectral-subtraction baseline over a directory.
    BaselineSs(commands::BaselineArgs),
    /// Objective metrics over matching reference and estimate files.
    Evaluate(commands::EvaluateArgs),
    /// Finite-difference gradient check of every layer and the full mixture loss.
    Gradcheck(commands::GradcheckArgs),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "info",
        _ => "debug",
    };
    let level = std::env::var("SSE_LOG_LEVEL").ok().filter(|_| verbose == 0).unwrap_or_else(|| default.to_string());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_target(false)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Failure::USAGE),
            };
        }
    };
    init_logging(cli.global.verbose);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
