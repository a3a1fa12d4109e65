//! The `parapath` command line: `run`, `order` and `list-models`.
//!
//! Exit codes: 0 on success, 1 for bad flags or configuration, 2 when the
//! numerics fail (diagnostics go to standard error).

mod commands;
pub mod csv;
mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_list_models, cmd_order, cmd_run, strong_errors, OrderReport, OrderRow, RunOutput,
};
pub use manifest::{OrderManifest, RunManifest};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "parapath",
    version,
    about = "Parareal for SDEs with conserved quantities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run parareal over many sample paths; writes convergence.csv and invariants.csv.
    Run(RunArgs),
    /// Estimate strong convergence orders; writes order.csv.
    Order(OrderArgs),
    /// List the built-in models.
    ListModels,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("{s}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON manifest; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Model constant, e.g. `--param c=0.5` (repeatable).
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long = "dT")]
    pub coarse_step: Option<f64>,
    #[arg(long = "J")]
    pub fine_steps: Option<usize>,
    /// Coarse scheme: euler, milstein, midpoint, with optional P suffix.
    #[arg(long)]
    pub coarse: Option<String>,
    /// Fine scheme, as for --coarse.
    #[arg(long)]
    pub fine: Option<String>,
    #[arg(long)]
    pub project_propagators: bool,
    #[arg(long)]
    pub project_correction: bool,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "PARAPATH_WORKERS")]
    pub workers: Option<usize>,
    /// Iteration whose trajectories go into invariants.csv (default 2).
    #[arg(long)]
    pub series_k: Option<usize>,
}

impl RunArgs {
    pub fn manifest(&self) -> Result<RunManifest> {
        let mut m = match &self.config {
            Some(path) => RunManifest::load(path)?,
            None => RunManifest::default(),
        };
        if let Some(v) = &self.model {
            m.model = v.clone();
        }
        m.params.extend(self.params.iter().cloned());
        if let Some(v) = self.horizon {
            m.horizon = v;
        }
        if let Some(v) = self.coarse_step {
            m.coarse_step = v;
        }
        if let Some(v) = self.fine_steps {
            m.fine_steps = v;
        }
        if let Some(v) = &self.coarse {
            m.coarse = v.clone();
        }
        if let Some(v) = &self.fine {
            m.fine = v.clone();
        }
        m.project_propagators |= self.project_propagators;
        m.project_correction |= self.project_correction;
        if let Some(v) = self.paths {
            m.paths = v;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if self.kmax.is_some() {
            m.kmax = self.kmax;
        }
        if let Some(v) = self.stop_tol {
            m.stop_tol = v;
        }
        if let Some(v) = &self.out {
            m.out = v.clone();
        }
        if self.workers.is_some() {
            m.workers = self.workers;
        }
        if self.series_k.is_some() {
            m.series_k = self.series_k;
        }
        Ok(m)
    }
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Comma-separated scheme list, e.g. `euler,eulerP,milstein`.
    #[arg(long, value_delimiter = ',')]
    pub schemes: Vec<String>,
    /// Comma-separated exponents e for h = T / 2^e.
    #[arg(long, value_delimiter = ',')]
    pub h_exponents: Vec<u32>,
    #[arg(long)]
    pub ref_exponent: Option<u32>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "PARAPATH_WORKERS")]
    pub workers: Option<usize>,
}

impl OrderArgs {
    pub fn manifest(&self) -> Result<OrderManifest> {
        let mut m = match &self.config {
            Some(path) => OrderManifest::load(path)?,
            None => OrderManifest::default(),
        };
        if let Some(v) = &self.model {
            m.model = v.clone();
        }
        m.params.extend(self.params.iter().cloned());
        if !self.schemes.is_empty() {
            m.schemes = self.schemes.clone();
        }
        if !self.h_exponents.is_empty() {
            m.h_exponents = self.h_exponents.clone();
        }
        if let Some(v) = self.ref_exponent {
            m.ref_exponent = v;
        }
        if let Some(v) = self.horizon {
            m.horizon = v;
        }
        if let Some(v) = self.paths {
            m.paths = v;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = &self.out {
            m.out = v.clone();
        }
        if self.workers.is_some() {
            m.workers = self.workers;
        }
        Ok(m)
    }
}

fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

fn summarize_run(out: &mut dyn Write, run: &RunOutput) -> std::io::Result<()> {
    let r = &run.report;
    writeln!(
        out,
        "{} {}/{} correction_projection={} paths={}",
        r.config.model,
        r.config.coarse,
        r.config.fine,
        r.config.correction_projection,
        r.path_count
    )?;
    writeln!(
        out,
        "stopped at k={} ({}), final mse {:e}",
        r.stop_iteration,
        if r.converged {
            "converged"
        } else {
            "k_max reached"
        },
        r.per_iteration_mse.last().copied().unwrap_or(f64::NAN)
    )?;
    let w = &r.wall_times;
    writeln!(
        out,
        "wall seconds: init {:.3}, reference {:.3}, fine {:.3}, correction {:.3}",
        w.initialize, w.reference, w.fine_sweep, w.correction
    )?;
    writeln!(out, "wrote {}", run.convergence_csv.display())?;
    writeln!(out, "wrote {}", run.invariants_csv.display())
}

/// Executes a parsed command line, returning the process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result: Result<()> = match cli.command {
        Command::ListModels => {
            let _ = write!(out, "{}", cmd_list_models());
            Ok(())
        }
        Command::Run(args) => args.manifest().and_then(|m| cmd_run(&m)).map(|run| {
            let _ = summarize_run(out, &run);
        }),
        Command::Order(args) => {
            args.manifest()
                .and_then(|m| cmd_order(&m))
                .map(|(report, path)| {
                    for (scheme, slope) in &report.slopes {
                        let _ = writeln!(out, "{scheme}: slope {slope:.3}");
                    }
                    let _ = writeln!(out, "wrote {}", path.display());
                })
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
    }
}

/// Parses `args` and runs; clap usage errors map to exit code 1.
pub fn main_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, &mut std::io::stdout(), &mut std::io::stderr()),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}
