use std::path::PathBuf;
use std::process::ExitCode;

use canomap_cli::config::RunConfig;
use canomap_cli::{runner, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "canomap", version, about = "Canonicity checks for controlling-function maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one configuration per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Check supplied derivatives against finite differences.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    runner::output_dir(cfg, std::env::var_os("CANOMAP_OUT").map(PathBuf::from))
}

fn execute(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = runner::run_to(&cfg, &out_dir(&cfg))?;
            println!("{}", out.summary);
            Ok(out.exit_code())
        }
        Command::Sweep { config, param, values } => {
            let cfg = RunConfig::load(&config)?;
            let values: Vec<String> = values.into_iter().filter(|v| !v.trim().is_empty()).collect();
            let rows = runner::sweep(&cfg, &param, &values, &out_dir(&cfg))?;
            for r in &rows {
                match &r.outcome {
                    Ok(o) => println!("{}={} {}", param, r.value, o.summary),
                    Err(e) => println!("{}={} ERROR {}", param, r.value, e),
                }
            }
            Ok(rows.iter().map(|r| r.exit_code).max().unwrap_or(0))
        }
        Command::Verify { config } => {
            let cfg = RunConfig::load(&config)?;
            let passed = runner::verify(&cfg, &out_dir(&cfg))?;
            println!("DERIVATIVES={}", if passed { "pass" } else { "fail" });
            Ok(if passed { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
