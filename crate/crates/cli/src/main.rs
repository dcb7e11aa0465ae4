use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecd_lab::{RunOptions, OUT_DIR_ENV};

/// Batch runner for ECD numerical scenarios.
///
/// Exit status: 0 success, 1 i/o, 2 invalid scenario, 3 numerical failure,
/// 4 accuracy target or gating check missed.
#[derive(Parser)]
#[command(name = "ecd-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV tables and manifest.json.
    Run {
        config: PathBuf,
        /// Output directory (default: output.dir, then $ECD_LAB_OUT, then ./ecd-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all available cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Set a scenario key, e.g. --override calibration.epsilon=1e-2.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a scenario against the schema without computing anything.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match ecd_lab::validate(&config) {
            Ok(d) if d.is_empty() => {
                println!("{}: valid", config.display());
                ExitCode::SUCCESS
            }
            Ok(d) => {
                for x in &d {
                    eprintln!("{}: {x}", config.display());
                }
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        },
        Command::Run {
            config,
            out,
            workers,
            overrides,
        } => {
            let opts = RunOptions {
                out_dir: out,
                workers,
                overrides,
            };
            match ecd_lab::run(&config, &opts) {
                Ok(m) => {
                    for c in &m.checks {
                        let verdict = match (c.passed, c.gating) {
                            (true, _) => "ok",
                            (false, true) => "FAILED",
                            (false, false) => "off (recorded)",
                        };
                        println!("{:<40} {:>14.6e}  {}", c.name, c.value, verdict);
                    }
                    let failed = m.failed_checks();
                    if failed.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("{} gating check(s) failed; see manifest.json", failed.len());
                        ExitCode::from(4)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    if matches!(e, ecd_lab::LabError::Io { .. }) && std::env::var_os(OUT_DIR_ENV).is_some() {
                        eprintln!("(output directory taken from ${OUT_DIR_ENV})");
                    }
                    ExitCode::from(e.exit_code())
                }
            }
        }
    }
}
