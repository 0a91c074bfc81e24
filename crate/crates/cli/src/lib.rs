//! The `mimo` command-line tool.

mod args;
mod commands;
mod config;
mod error;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Ablation, Cli, Command, Common};
pub use commands::{CONFIG_FILE, MANIFEST_FILE, REPORT_FILE};
pub use config::{GradcheckConfig, RunConfig, SynthesizeConfig};
pub use error::{CliError, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION};

/// Environment variable bounding the worker thread count.
pub const THREADS_VAR: &str = "MIMO_THREADS";

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    // a pool may already exist when called repeatedly in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Deblur(a) => commands::deblur(a),
        Command::Params(a) => commands::params(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Validation(items) => {
                    eprintln!("error: {} problem{}", items.len(), if items.len() == 1 { "" } else { "s" });
                    for item in items {
                        eprintln!("  {item}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}
