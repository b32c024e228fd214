use std::path::PathBuf;
use std::process::ExitCode;

use asyncpipe::harness::{self, render_comparison};
use asyncpipe::{parse_config, Error};
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

/// Simulate pipeline-parallel training with stale gradients.
#[derive(Parser)]
#[command(name = "asyncpipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts to `out_dir`.
    Run { config: PathBuf },
    /// Run one experiment per value of a config key and compare them.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Recompute metrics and invariants from a stored run directory.
    Check { trace_dir: PathBuf },
    /// Print a comparison table over stored run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Trace(_) | Error::IncompleteWindow(_) => EXIT_CHECK_FAILED,
        _ => EXIT_VALIDATION,
    }
}

fn load(path: &PathBuf) -> Result<asyncpipe::ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let summary = harness::run_experiment(&cfg)?;
            println!("{}", cfg.out_dir.display());
            match summary.diverged {
                Some(d) => {
                    eprintln!("diverged at step {}, stage {}", d.step, d.stage);
                    Ok(EXIT_DIVERGED)
                }
                None => Ok(0),
            }
        }
        Command::Sweep { config, axis, values } => {
            let cfg = load(&config)?;
            let rows = harness::sweep(&cfg, &axis, &values)?;
            print!("{}", render_comparison(&rows));
            Ok(0)
        }
        Command::Check { trace_dir } => {
            let report = harness::check(&trace_dir)?;
            for f in &report.failures {
                eprintln!("FAIL {f}");
            }
            println!("{} checks, {} failed", report.checked, report.failures.len());
            Ok(if report.passed() { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Report { dirs } => {
            print!("{}", harness::report(&dirs)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let is_check = matches!(cli.command, Command::Check { .. });
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            // anything wrong with a stored run is a failed check
            let code = if is_check && !matches!(e, Error::Io(_)) {
                EXIT_CHECK_FAILED
            } else {
                exit_for(&e)
            };
            ExitCode::from(code)
        }
    }
}
