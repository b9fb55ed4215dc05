//! Command-line front end: `solve`, `denoise`, `bench` and `check`.
//!
//! Exit codes: 0 success, 1 malformed input, 2 solver divergence, 3 I/O
//! failure, 4 failed theory check.

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub mod bench;
pub mod check;
pub mod denoise;
pub mod error;
pub mod formats;
pub mod problem_file;
pub mod solve;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "nsp", version, about = "Primal-dual solver for least squares with non-separable l1 penalties")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem described by a JSON document.
    Solve(solve::SolveArgs),
    /// Total-variation denoising of a PGM image.
    Denoise(denoise::DenoiseArgs),
    /// Compare the solver with its special-case baselines on generated problems.
    Bench(bench::BenchArgs),
    /// Run the convergence-theory checks on built-in problems.
    Check(check::CheckArgs),
}

/// Parses `args` (including the program name) and runs the command. Reports
/// go to `out`, diagnostics to `err`; the return value is the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve::run(&a, out),
        Command::Denoise(a) => denoise::run(&a, out),
        Command::Bench(a) => bench::run(&a, out),
        Command::Check(a) => check::run(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Writes to `out`, mapping a closed pipe or similar to an I/O error.
pub(crate) fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io(std::path::Path::new("<stdout>"), e))
}

/// Parser for iteration counts and similar arguments that must be at least 1.
pub(crate) fn positive_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}
