//! Command-line front end: configuration, seeding, orchestration and artifacts.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use thiserror::Error;
use torus_lab::LabError;

pub use config::{RunConfig, Validated, SCHEMA_VERSION};

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "TORUS_LAB_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FINDING: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("config is not a valid run document: {0}")]
    ConfigParse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),

    #[error(transparent)]
    Lab(#[from] LabError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lab(LabError::HypothesisViolated(_)) => EXIT_FINDING,
            _ => EXIT_ERROR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Certify,
    Stationary,
    RhoNorm,
    CurveEvolve,
    KeyEstimate,
    LasotaYorke,
    Holder,
    Transversality,
    Expansion,
    Equidistribute,
    Periodic,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Stationary => "stationary",
            Command::RhoNorm => "rho-norm",
            Command::CurveEvolve => "curve-evolve",
            Command::KeyEstimate => "key-estimate",
            Command::LasotaYorke => "lasota-yorke",
            Command::Holder => "holder",
            Command::Transversality => "transversality",
            Command::Expansion => "expansion",
            Command::Equidistribute => "equidistribute",
            Command::Periodic => "periodic",
        }
    }
}

/// Result of one command: ordered summary pairs, CSV files, and whether the run
/// reports a violated hypothesis or failed inequality.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: Vec<(String, String)>,
    pub files: Vec<(String, String)>,
    pub finding: bool,
}

impl Outcome {
    pub fn kv(&mut self, key: impl Into<String>, value: impl ToString) {
        self.summary.push((key.into(), value.to_string()));
    }

    /// Appends the `key=value` lines produced by a core `to_kv`.
    pub fn kv_block(&mut self, block: &str) {
        for line in block.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.kv(k, v);
            }
        }
    }

    pub fn file(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }
}

/// Thread count from the flag, else from [`THREADS_ENV`], else 0 (automatic).
pub fn resolve_threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::ConfigInvalid {
            field: THREADS_ENV.into(),
            reason: format!("`{v}` is not a non-negative integer"),
        }),
        Err(_) => Ok(0),
    }
}

/// Options of one invocation besides the command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
}

/// Loads, validates and runs; writes artifacts and `summary.txt` into `out`.
pub fn execute(command: Command, opts: &RunOptions) -> Result<Outcome, CliError> {
    let mut cfg = RunConfig::load(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let v = cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| CliError::ThreadPool(e.to_string()))?;
    let outcome = pool.install(|| commands::dispatch(command, &v))?;
    write_artifacts(&opts.out, command, v.config.seed, &outcome)?;
    Ok(outcome)
}

/// [`execute`] mapped to an exit code; errors are reported on stderr.
pub fn run(command: Command, opts: &RunOptions) -> i32 {
    match execute(command, opts) {
        Ok(o) if o.finding => EXIT_FINDING,
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == EXIT_FINDING {
                let _ = write_violation(&opts.out, command, &e);
            }
            e.exit_code()
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn summary_text(command: Command, seed: u64, status: &str, pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command={}", command.name());
    let _ = writeln!(s, "schema_version={SCHEMA_VERSION}");
    let _ = writeln!(s, "seed={seed}");
    let _ = writeln!(s, "status={status}");
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

fn write_artifacts(out: &Path, command: Command, seed: u64, o: &Outcome) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for (name, contents) in &o.files {
        write_file(&out.join(name), contents)?;
    }
    let status = if o.finding { "finding" } else { "ok" };
    write_file(&out.join("summary.txt"), &summary_text(command, seed, status, &o.summary))
}

fn write_violation(out: &Path, command: Command, e: &CliError) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|err| io_err(out, err))?;
    let reason = e.to_string().replace('\n', " ");
    let mut s = String::new();
    let _ = writeln!(s, "command={}", command.name());
    let _ = writeln!(s, "status=hypothesis_violated");
    let _ = writeln!(s, "reason={reason}");
    write_file(&out.join("summary.txt"), &s)
}
