mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::ScenarioConfig;
use run::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(name = "iotgate", version, about = "Three-party IoT payment channel simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write transcript.log, verdict.txt, verdict.json (and tables/).
    Run(RunArgs),
    /// List scenario names.
    Scenarios,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML scenario config. Missing keys take their defaults.
    config: Option<PathBuf>,
    #[arg(long = "config", conflicts_with = "config")]
    config_flag: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

fn run(args: RunArgs) -> Result<bool, CliError> {
    let mut cfg = match args.config.or(args.config_flag) {
        Some(path) => ScenarioConfig::load(&path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(s) = args.scenario {
        cfg.scenario = s;
        cfg.validate()?;
    }
    let format = match args.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Text => Format::Text,
    };
    let out = run::execute(&cfg, format)?;
    run::write_outputs(&out, &args.out, format)?;
    print!("{}", out.verdict);
    Ok(out.verdict.passed())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Scenarios => {
            for s in ["open", "pay", "close", "tables"] {
                println!("{s}");
            }
            for s in iotgate::threat::AttackScenario::NAMES {
                println!("threat:{s}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e @ CliError::Config(_)) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        },
    }
}
