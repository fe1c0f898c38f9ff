//! Batch front-end for the defectscope library.
//!
//! `defectscope <command> --config <path> [--seed S] [--out DIR]` reads one
//! TOML configuration, runs the named diagnostic, and leaves a directory of
//! CSV/JSON artifacts plus a manifest describing the run. Exit codes: 0 on
//! success, 2 when the configuration or an input contract is rejected (in
//! which case nothing is written), 3 when a computation blows up numerically
//! (in which case a diagnostic file is left in the output directory).
//!
//! `DEFECTSCOPE_THREADS` caps the number of worker threads; artifacts do not
//! depend on the thread count, and reruns with the same configuration and
//! seed reproduce them byte for byte.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or violated input contract; exit code 2.
    Validation(String),
    /// Numeric blowup detected mid-run; exit code 3.
    Numeric(String),
}

impl From<defectscope::Error> for CliError {
    fn from(e: defectscope::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CommandName {
    /// Project frequency points onto the fibration's manifold.
    Project,
    /// Dump normalized symbols and their fibre-invariance defects.
    Symbol,
    /// Profile the operator norm of a symbol-window commutator.
    Commutator,
    /// Estimate the direction-resolved defect measure of a sequence.
    Hmeasure,
    /// Classify a flux as genuinely nonlinear or degenerate.
    Nonlinearity,
    /// Probe the entropy defect of one sequence member.
    Defect,
    /// Relax oscillating data and tabulate surviving defect mass.
    Experiment,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Project => "project",
            CommandName::Symbol => "symbol",
            CommandName::Commutator => "commutator",
            CommandName::Hmeasure => "hmeasure",
            CommandName::Nonlinearity => "nonlinearity",
            CommandName::Defect => "defect",
            CommandName::Experiment => "experiment",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "defectscope", version, about = "Oscillation and concentration diagnostics on periodic grids")]
struct Cli {
    /// Diagnostic to run.
    #[arg(value_enum)]
    command: CommandName,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Root seed override for sampled diagnostics.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DEFECTSCOPE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Validation(format!("DEFECTSCOPE_THREADS must be a positive integer, got {raw:?}"))
    })?;
    if n == 0 {
        return Err(CliError::Validation(
            "DEFECTSCOPE_THREADS must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(format!("cannot configure thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        CliError::Validation(format!("cannot read config {}: {e}", cli.config.display()))
    })?;
    let config = RunConfig::parse(&text)?;
    let seed = cli.seed.unwrap_or(config.run.seed);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("defectscope-out"));

    match commands::run(cli.command, &config, seed, &out_dir) {
        Ok(count) => {
            println!(
                "{}: wrote {count} artifacts and manifest.json to {}",
                cli.command.as_str(),
                out_dir.display()
            );
            Ok(())
        }
        Err(CliError::Numeric(msg)) => {
            let diagnostic = json!({
                "error": "numeric",
                "command": cli.command.as_str(),
                "seed": seed,
                "message": msg,
            });
            if std::fs::create_dir_all(&out_dir).is_ok() {
                let body = format!("{:#}\n", diagnostic);
                let _ = std::fs::write(out_dir.join("diagnostic.json"), body);
            }
            Err(CliError::Numeric(msg))
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            report_error("validation", &msg);
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            report_error("numeric", &msg);
            ExitCode::from(3)
        }
    }
}
