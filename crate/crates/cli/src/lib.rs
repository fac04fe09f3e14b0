//! Command-line harness: synthetic data, Hopkins statistics, training grids,
//! reports and epoch benchmarks.

pub mod args;
pub mod commands;
pub mod data;
pub mod error;

pub use args::Cli;
pub use error::{CliError, CliResult};

use clap::Parser;

/// Parses `argv` and runs the command, writing results to `out`.
///
/// Returns the process exit code. Help and version requests exit 0; other
/// parse failures exit 1.
pub fn main_with<I, T>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
