//! `crowdkwh`: simulate, analyze, rerun, serve, ingest-meter and export.

mod args;
mod commands;
mod failure;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Analyze(a) => commands::analyze_cmd(a),
        Command::Rerun(a) => commands::rerun_cmd(a),
        Command::Serve(a) => commands::serve_cmd(a),
        Command::IngestMeter(a) => commands::ingest_cmd(a),
        Command::Export(a) => commands::export_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("crowdkwh: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
