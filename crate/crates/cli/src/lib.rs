//! `exporay` command-line front end.
//!
//! Exit codes: 0 success, 1 evaluation error, 64 usage error; `verify` uses
//! 2 when a case fails and 3 when the outcome is only inconclusive.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

use config::{ConfigFlags, RunConfig};

pub const EXIT_EVAL: i32 = 1;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Eval(_) => EXIT_EVAL,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "exporay", version, about = "Rays, orbits and parameter space of exp(z) + kappa")]
pub struct Cli {
    /// Worker threads (falls back to EXPORAY_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a dynamic ray into CSV, optionally landing it.
    TraceRay {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long, allow_hyphen_values = true)]
        address: String,
        /// Potential range `t_min:t_max`.
        #[arg(long, default_value = "0.01:10")]
        t: String,
        #[arg(long)]
        land: bool,
        #[arg(long, default_value = "ray")]
        name: String,
    },
    /// Trace a parameter ray into CSV, optionally landing it.
    TraceParamRay {
        #[arg(long, allow_hyphen_values = true)]
        address: String,
        #[arg(long, default_value_t = 20.0)]
        t_start: f64,
        #[arg(long, default_value_t = 1e-3)]
        t_end: f64,
        #[arg(long)]
        land: bool,
        #[arg(long, default_value = "param_ray")]
        name: String,
    },
    /// Classify the singular orbit over a parameter grid (width x height cells).
    Scan {
        /// `re_min:re_max:im_min:im_max`.
        #[arg(long, allow_hyphen_values = true)]
        rect: String,
        #[arg(long, default_value = "scan")]
        name: String,
    },
    /// Escape-time picture of the dynamical plane with ray overlays.
    RenderDyn {
        #[arg(long, allow_hyphen_values = true)]
        kappa: String,
        #[arg(long, allow_hyphen_values = true)]
        rect: String,
        /// Address to overlay; repeatable.
        #[arg(long, allow_hyphen_values = true)]
        overlay: Vec<String>,
        /// Smallest overlay potential.
        #[arg(long, default_value_t = 0.01)]
        t_min: f64,
        #[arg(long, default_value_t = 100)]
        escape_iter: usize,
        #[arg(long, default_value = "dyn")]
        name: String,
    },
    /// Component scan of the parameter plane with parameter-ray overlays.
    RenderParam {
        #[arg(long, allow_hyphen_values = true)]
        rect: String,
        #[arg(long, allow_hyphen_values = true)]
        overlay: Vec<String>,
        #[arg(long, default_value_t = 1e-2)]
        t_end: f64,
        #[arg(long, default_value = "param")]
        name: String,
    },
    /// Run a numerical experiment and write its report.
    Verify {
        #[command(subcommand)]
        experiment: commands::Experiment,
    },
}

/// Parses, runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("exporay: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("EXPORAY_THREADS") {
            Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("EXPORAY_THREADS={v:?} is not a count")))?,
            Err(_) => return Ok(0),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let threads = thread_count(cli.threads)?;
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Eval(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, &cfg))
}
