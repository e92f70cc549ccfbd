//! `spectrum`: generate instances, run allocation algorithms and mechanisms,
//! and run verification suites.

mod generate;
mod output;
mod run;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use spectrum_core::Instance;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const THREADS_VAR: &str = "SPECTRUM_THREADS";

#[derive(Parser, Debug)]
#[command(name = "spectrum", version, about = "Truthful spectrum auctions on conflict graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random instance as JSON.
    Generate(generate::GenerateArgs),
    /// Run an algorithm or mechanism for a number of seeded trials and write CSV.
    Run(run::RunArgs),
    /// Run a verification suite and write a JSON pass/fail report.
    Verify(verify::VerifyArgs),
}

/// Bad flags or unreadable inputs; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn load_instance(path: &Path) -> anyhow::Result<Instance> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Instance::from_json_str(&text).with_context(|| format!("loading {}", path.display()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use spectrum_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parameter(_) => 2,
                E::Domain(_) | E::Mode(_) | E::Size { .. } | E::Format(_) => 3,
                _ => 4,
            };
        }
    }
    4
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Generate(a) => generate::execute(&a),
        Command::Run(a) => run::execute(&a),
        Command::Verify(a) => verify::execute(&a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Output destination: a file written atomically, or stdout.
pub fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => output::write_atomic(path, text),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .context("writing to stdout")
        }
    }
}
