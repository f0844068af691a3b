use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use lokrisk::cli::{execute, load_config, Cli, Command};
use lokrisk::{api, ApiError, AppError};
use tracing_subscriber::EnvFilter;

/// Writes one JSON document to stdout. A closed pipe is not an error.
fn emit<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_error(e: &ApiError) {
    emit(e);
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut cfg = load_config(&cli)?;
    if let Command::Serve { port } = &cli.command {
        if let Some(p) = port {
            cfg.port = *p;
        }
        let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::Config(e.to_string()))?;
        return rt.block_on(api::serve(cfg));
    }
    let out = execute(&cli, &cfg)?;
    emit(&out);
    Ok(())
}

fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.print()?;
            return Ok(ExitCode::SUCCESS);
        }
        Err(e) => {
            print_error(&ApiError {
                code: "usage".into(),
                message: e.to_string(),
                details: serde_json::Value::Null,
            });
            return Ok(ExitCode::from(2));
        }
    };
    match run(cli) {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            print_error(&e.to_api());
            Ok(ExitCode::FAILURE)
        }
    }
}
