//! `forwardperf`: run verification scenarios, print conjugate tables and
//! export simulated paths.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on a
//! configuration or input error.

mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "forwardperf", version, about = "Verify exponential forward performance processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its report.
    Run {
        scenario: PathBuf,
        /// Report destination (defaults to the scenario's `report` key or
        /// `<scenario>.report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the dual V(y) from the numeric conjugate and the closed form.
    Conjugate {
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
        gamma: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
        y: Vec<f64>,
    },
    /// Simulate the scenario's market and write paths as CSV.
    ExportPaths {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, report } => {
            let loaded = match scenario::load(&scenario) {
                Ok(l) => l,
                Err(e) => return config_error(e),
            };
            match run::run_scenario(&loaded, report.as_deref()) {
                Ok(out) => {
                    for e in out.report.entries.values().filter(|e| e.check_id.starts_with("check:")) {
                        println!(
                            "{:<14} {:<24} {}",
                            e.verdict.to_string(),
                            e.check_id.trim_start_matches("check:"),
                            e.detail
                        );
                    }
                    for e in out.report.failures().filter(|e| !e.check_id.starts_with("check:")) {
                        println!("  failed {}: {}", e.check_id, e.detail);
                    }
                    if let Some(p) = &out.report_path {
                        println!("report: {}", p.display());
                    }
                    if out.report.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_FAIL)
                    }
                }
                Err(e) => config_error(e),
            }
        }
        Command::Conjugate { gamma, a, y } => match run::conjugate_table(&gamma, &a, &y) {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Command::ExportPaths { scenario, out } => {
            let loaded = match scenario::load(&scenario) {
                Ok(l) => l,
                Err(e) => return config_error(e),
            };
            match run::run_export(&loaded, out.as_deref()) {
                Ok(p) => {
                    println!("wrote {}", p.display());
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(e),
            }
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}
