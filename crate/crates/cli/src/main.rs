use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod output;

use args::{Cli, Command};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation detected after argument parsing. Exit code 2.
    Usage(String),
    /// Exit code 1.
    Runtime(String),
}

impl From<cfcam::Error> for CliError {
    fn from(e: cfcam::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CFCAM_LOG", "warn"))
        .format_timestamp(None)
        .init();

    // clap exits with status 2 on its own usage errors
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Explain(a) => commands::explain(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Robustness(a) => commands::robustness(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
