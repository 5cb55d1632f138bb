mod cli;
mod commands;
mod config;
mod run;
mod workspace;

use std::process::ExitCode;

use clap::Parser;
use cnnlens_core::Error;

use crate::cli::Cli;
use crate::config::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Maps the first core error in the chain onto an exit code and kind label.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_)
                | Error::Address(_)
                | Error::Config(_)
                | Error::Dimension { .. } => (EXIT_USAGE, "usage"),
                Error::Format { .. } | Error::Weights(_) | Error::Io { .. } => (EXIT_DATA, "data"),
                Error::NonFinite(_) | Error::Aborted { .. } => (EXIT_NUMERIC, "numerical"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (EXIT_DATA, "io");
        }
    }
    (EXIT_USAGE, "usage")
}

fn report(kind: &str, code: u8, message: &str) {
    eprintln!("error: {message}");
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "kind": kind, "code": code, "message": message } })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            report(
                "usage",
                EXIT_USAGE,
                text.trim().trim_start_matches("error: "),
            );
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = RunConfig::resolve(&cli.common)
        .and_then(|cfg| commands::dispatch(&cli.command, &cli.common, &cfg));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (code, kind) = classify(&e);
            report(kind, code, &format!("{e:#}"));
            ExitCode::from(code)
        }
    }
}
