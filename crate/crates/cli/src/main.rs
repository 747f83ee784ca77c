use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use curved_nbody_cli::{parse_config_with, run, Command, ConfigError, Format, Overrides, RunError};

/// Curved n-body laboratory: simulation, relative equilibria and bound probes.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// Overrides the config's `command`.
    #[arg(value_enum)]
    command: Option<Command>,
    /// Flat JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("{}", e.record());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            let msg = format!("cannot read {}: {e}", cli.config.display());
            return fail(&RunError::Config(ConfigError::new("config", msg)));
        }
    };
    let overrides = Overrides {
        command: cli.command,
        output: cli.out,
        seed: cli.seed,
        format: cli.format,
    };
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&RunError::Config(e)),
    };
    let outcome = run(&config);
    if let Some(bytes) = &outcome.artifact {
        let written = match &config.output {
            Some(path) => {
                std::fs::write(path, bytes).map_err(|e| format!("cannot write {path}: {e}"))
            }
            None => std::io::stdout()
                .write_all(bytes)
                .map_err(|e| format!("cannot write stdout: {e}")),
        };
        if let Err(msg) = written {
            return fail(&RunError::Internal(msg));
        }
    }
    match &outcome.failure {
        Some(e) => fail(e),
        None => ExitCode::SUCCESS,
    }
}
