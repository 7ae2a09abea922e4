//! `lapdeform` command line and the HTTP deform service.

pub mod commands;
pub mod service;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use lapdeform_core::Error;

pub use commands::{Cli, Command};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

/// Failure of one CLI invocation.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) if e.is_numerical() => exit::NUMERICAL,
            CliError::Core(_) => exit::DATA,
        }
    }

    /// `{"error": kind, "message": text}`.
    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("Usage", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors go to stderr as one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return exit::OK;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            let _ = writeln!(std::io::stderr(), "{}", err.to_json());
            return exit::USAGE;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => exit::OK,
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "{}", err.to_json());
            err.exit_code()
        }
    }
}
