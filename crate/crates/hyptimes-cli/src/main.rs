//! `hyptimes` command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure, 4 inconclusive
//! verdict under `--strict`. `HYPTIMES_THREADS` sets the worker count for
//! grid classification; results do not depend on it.

mod args;
mod commands;
mod output;

use std::fmt;
use std::fs;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Invocation, ReplayArgs};
use output::{emit, Manifest, SystemSpec};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn io<E: fmt::Display>(e: E) -> Self {
        CliError::Io(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<hyptimes::Error> for CliError {
    fn from(e: hyptimes::Error) -> Self {
        if e.is_input() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

fn threads() -> Result<Option<usize>, CliError> {
    match std::env::var("HYPTIMES_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Input(format!("HYPTIMES_THREADS must be a positive integer, got '{s}'"))),
        },
    }
}

/// Runs an invocation and writes its outputs; returns true when a verdict was inconclusive.
fn execute(inv: Invocation, spec: Option<SystemSpec>, out: Option<&std::path::Path>) -> Result<(Manifest, bool), CliError> {
    let outputs = commands::run(&inv, spec.as_ref(), threads()?)?;
    let manifest = emit(Manifest::new(inv, spec), &outputs, out)?;
    Ok((manifest, outputs.inconclusive))
}

fn run(inv: Invocation) -> Result<u8, CliError> {
    let spec = inv.system().map(SystemSpec::from_args).transpose()?;
    let strict = matches!(&inv, Invocation::Classify(a) if a.strict);
    let out = inv.out().cloned();
    let (_, inconclusive) = execute(inv, spec, out.as_deref())?;
    Ok(if strict && inconclusive { 4 } else { 0 })
}

fn replay(a: ReplayArgs) -> Result<u8, CliError> {
    let text = fs::read_to_string(&a.manifest)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.manifest.display())))?;
    let recorded: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("invalid manifest: {e}")))?;
    let strict = matches!(&recorded.invocation, Invocation::Classify(c) if c.strict);
    let (fresh, inconclusive) = execute(recorded.invocation.clone(), recorded.system.clone(), a.out.as_deref())?;
    if fresh.input_hash != recorded.input_hash {
        return Err(CliError::Input("manifest input hash does not match its contents".into()));
    }
    if a.verify {
        if a.out.is_none() {
            return Err(CliError::Input("--verify needs --out".into()));
        }
        if fresh.outputs != recorded.outputs {
            return Err(CliError::Numeric("replayed outputs differ from the recorded hashes".into()));
        }
    }
    Ok(if strict && inconclusive { 4 } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(inv) => run(inv),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("hyptimes: {e}");
            ExitCode::from(e.code())
        }
    }
}
