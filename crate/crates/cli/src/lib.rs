//! Command-line front end and HTTP service for the eventscope pipeline.

pub mod commands;
pub mod server;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;

use commands::{Cli, Command, DataError, Outcome};

#[derive(Serialize)]
struct ErrorReport<'a> {
    command: &'a str,
    error: String,
    causes: Vec<String>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Ingest(_) => "ingest",
        Command::Fit(_) => "fit",
        Command::Detect(_) => "detect",
        Command::Fuse(_) => "fuse",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::Granger(_) => "granger",
        Command::Normality(_) => "normality",
        Command::Annotate(_) => "annotate",
        Command::Serve(_) => "serve",
    }
}

fn report_dir(c: &Command) -> Option<&Path> {
    match c {
        Command::Simulate(a) => Some(&a.out),
        Command::Ingest(a) => Some(a.common.out_dir()),
        Command::Fit(a) | Command::Normality(a) => Some(a.out_dir()),
        Command::Detect(a) => Some(a.common.out_dir()),
        Command::Fuse(a) => Some(a.common.out_dir()),
        Command::Eval(a) => Some(a.common.out_dir()),
        Command::Sweep(a) => Some(a.common.out_dir()),
        Command::Granger(a) => Some(a.common.out_dir()),
        Command::Annotate(a) => Some(a.common.out_dir()),
        Command::Serve(a) => Some(&a.data_dir),
    }
}

fn write_error_report(command: &Command, e: &anyhow::Error) -> Option<PathBuf> {
    if let Some(d) = e.downcast_ref::<DataError>() {
        return Some(d.report.clone());
    }
    let path = report_dir(command)?.join("error_report.json");
    let report = ErrorReport {
        command: command_name(command),
        error: e.to_string(),
        causes: e.chain().skip(1).map(|c| c.to_string()).collect(),
    };
    std::fs::create_dir_all(path.parent()?).ok()?;
    std::fs::write(&path, serde_json::to_vec_pretty(&report).ok()?).ok()?;
    Some(path)
}

pub fn execute(command: &Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Fit(a) => commands::fit(a),
        Command::Detect(a) => commands::detect(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Granger(a) => commands::granger(a),
        Command::Normality(a) => commands::normality(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Serve(a) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(a))?;
            Ok(Outcome::default())
        }
    }
}

/// Runs the command line and returns the process exit status: 0 on
/// success, 1 on a data or runtime error (with a report file), 2 on a usage
/// error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if !outcome.summary.is_empty() {
                println!("{}", outcome.summary);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(path) = write_error_report(&cli.command, &e) {
                eprintln!("report: {}", path.display());
            }
            1
        }
    }
}
