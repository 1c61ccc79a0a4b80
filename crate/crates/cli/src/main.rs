use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crib_core::harness::{emit_outputs, run_scenario, OutputFormat, Scenario, ScenarioConfig};
use crib_core::CribError;

#[derive(Parser)]
#[command(
    name = "crib-sim",
    version,
    about = "Stark-echo optical memory simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML scenario config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: output.dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Dotted config override, e.g. `--set profile.d_peak=0.4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Echo histogram for a single storage time.
    Simulate,
    /// Efficiency against storage time with a Gaussian decay fit.
    DecayScan,
    /// Echo counts and SNR against mean photon number.
    Linearity,
    /// Fit a Gaussian decay to tabulated points, or to a fresh scan.
    FitDecay {
        /// CSV with storage_time_ns and efficiency columns.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Check the preparation and storage timing budget.
    SequenceCheck,
    /// Echo with and without the narrow absorption peak.
    NoPeakControl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Svg => OutputFormat::Svg,
        }
    }
}

fn load(cli: &Cli) -> Result<ScenarioConfig, CribError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Command::FitDecay { input: Some(path) } = &cli.command {
        let quoted = toml::Value::String(path.display().to_string());
        overrides.push(format!("decay.points_file={quoted}"));
    }
    match &cli.config {
        Some(path) => ScenarioConfig::load(path, &overrides),
        None => ScenarioConfig::from_toml_with_overrides("", &overrides),
    }
}

fn exit_code(err: &CribError) -> u8 {
    match err.root() {
        CribError::Config { .. } => 2,
        CribError::NumericalFailure { .. }
        | CribError::FitFailure(_)
        | CribError::UndefinedSnr(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let scenario = match cli.command {
        Command::Simulate => Scenario::EchoHistogram,
        Command::DecayScan => Scenario::DecayScan,
        Command::Linearity => Scenario::Linearity,
        Command::FitDecay { .. } => Scenario::FitDecay,
        Command::SequenceCheck => Scenario::SequenceCheck,
        Command::NoPeakControl => Scenario::NoPeakControl,
    };
    let bundle = match run_scenario(&config, scenario) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let dir = cli.out.unwrap_or_else(|| config.output.dir.clone());
    let format = cli
        .format
        .map(OutputFormat::from)
        .unwrap_or(config.output.format);
    match emit_outputs(&bundle, format, &dir) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    }
    match serde_json::to_string_pretty(&bundle.summary) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::SUCCESS
}
