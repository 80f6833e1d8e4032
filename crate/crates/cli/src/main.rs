mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "oneshot", version, about = "One-shot long-horizon manipulation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate tasks and scripted demonstrations for every (level, seed).
    GenDemos(GenDemosArgs),
    /// Split a demonstration file into interaction phases.
    Decompose(DecomposeArgs),
    /// Run the trial grid and write results and metrics.
    Evaluate(EvaluateArgs),
    /// Summarize one or more results files.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GridOverrides {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated levels, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u8>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
struct GenDemosArgs {
    #[command(flatten)]
    grid: GridOverrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecomposeMode {
    Rule,
    Vlm,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Demonstration file (JSON lines).
    demo: PathBuf,
    #[arg(long, value_enum, default_value = "rule")]
    mode: DecomposeMode,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repair single-frame gaps in the endpoint response.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    task_type: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Write the decomposition here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    grid: GridOverrides,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    trials: Option<u32>,
    /// Comma-separated models: oracle, descriptor, random.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    perturbation_m: Option<f64>,
    #[arg(long)]
    perturbation_rad: Option<f64>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum ReportFormat {
    Csv,
    Markdown,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Results CSV files.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: ReportFormat,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenDemos(a) => commands::gen_demos(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
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
