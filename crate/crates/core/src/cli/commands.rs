use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use super::csv::{float, write_convergence, write_invariants, ORDER_HEADER};
use super::manifest::{resolve_model, OrderManifest, RunManifest};
use crate::error::{Error, Result};
use crate::metrics::{mean_square_error, strong_order_fit, ExperimentReport};
use crate::model::{default_params, make_model, BUILTIN_MODELS};
use crate::noise::NoiseGrid;
use crate::parareal::{self, RunOptions};
use crate::projection::{Manifold, ProjectionConfig};
use crate::schemes::PropagatorSpec;

fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        Some(w) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(f)),
        None => Ok(f()),
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: ExperimentReport<f64>,
    pub convergence_csv: PathBuf,
    pub invariants_csv: PathBuf,
}

/// Runs parareal over `paths` sample paths and writes `convergence.csv` and
/// `invariants.csv` into the output directory.
pub fn cmd_run(manifest: &RunManifest) -> Result<RunOutput> {
    let (model, cfg) = manifest.build()?;
    let n = cfg.intervals()?;
    fs::create_dir_all(&manifest.out)?;
    let report = with_workers(manifest.workers, || -> Result<_> {
        let grids = (0..manifest.paths as u64)
            .into_par_iter()
            .map(|p| {
                NoiseGrid::generate(
                    manifest.seed,
                    p,
                    n,
                    cfg.fine_steps,
                    model.noise_count(),
                    cfg.fine_step(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let opts = RunOptions {
            workers: None,
            series_iteration: manifest.series_k,
        };
        parareal::run(&model, &cfg, &grids, &opts)
    })??;

    let convergence_csv = manifest.out.join("convergence.csv");
    let invariants_csv = manifest.out.join("invariants.csv");
    let mut w = create(&convergence_csv)?;
    write_convergence(&mut w, &report)?;
    w.flush()?;
    let mut w = create(&invariants_csv)?;
    write_invariants(&mut w, &report)?;
    w.flush()?;
    Ok(RunOutput {
        report,
        convergence_csv,
        invariants_csv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub scheme: String,
    pub h: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub rows: Vec<OrderRow>,
    /// Fitted slope per scheme, in input order.
    pub slopes: Vec<(String, f64)>,
}

impl OrderReport {
    pub fn slope(&self, scheme: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|(s, _)| s == scheme)
            .map(|&(_, v)| v)
    }
}

/// Strong-error study: each scheme is integrated at `h = T / 2^e` on shared
/// Brownian paths and compared with a reference solution at `T / 2^ref`.
pub fn strong_errors(manifest: &OrderManifest) -> Result<OrderReport> {
    manifest.validate()?;
    let (model, x0) = resolve_model(&manifest.model, &manifest.params, manifest.x0.as_deref())?;
    let manifold = Manifold::through(&model, &x0, ProjectionConfig::default())?;
    let schemes: Vec<PropagatorSpec<f64>> = manifest
        .schemes
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let reference: PropagatorSpec<f64> = manifest.reference.parse()?;
    let fine_count = 1usize << manifest.ref_exponent;
    let dt_ref = manifest.horizon / fine_count as f64;

    // diffs[p][scheme][level]
    let diffs: Vec<Vec<Vec<Vec<f64>>>> = with_workers(manifest.workers, || {
        (0..manifest.paths as u64)
            .into_par_iter()
            .map(|p| -> Result<_> {
                let grid = NoiseGrid::generate(
                    manifest.seed,
                    p,
                    1,
                    fine_count,
                    model.noise_count(),
                    dt_ref,
                )?;
                let incs = grid.resampled(fine_count)?;
                let exact = reference.integrate(
                    &model,
                    &manifold,
                    &x0,
                    dt_ref,
                    incs.iter().map(Vec::as_slice),
                )?;
                let mut per_scheme = Vec::with_capacity(schemes.len());
                for scheme in &schemes {
                    let mut per_level = Vec::with_capacity(manifest.h_exponents.len());
                    for &e in &manifest.h_exponents {
                        let steps = 1usize << e;
                        let incs = grid.resampled(steps)?;
                        let h = manifest.horizon / steps as f64;
                        let x = scheme.integrate(
                            &model,
                            &manifold,
                            &x0,
                            h,
                            incs.iter().map(Vec::as_slice),
                        )?;
                        per_level.push(x.iter().zip(&exact).map(|(a, b)| a - b).collect());
                    }
                    per_scheme.push(per_level);
                }
                Ok(per_scheme)
            })
            .collect::<Vec<_>>()
    })?
    .into_iter()
    .enumerate()
    .map(|(p, r)| r.map_err(|e| e.on_path(p)))
    .collect::<Result<_>>()?;

    let hs: Vec<f64> = manifest
        .h_exponents
        .iter()
        .map(|&e| manifest.horizon / (1u64 << e) as f64)
        .collect();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (s, name) in manifest.schemes.iter().enumerate() {
        let mut errs = Vec::with_capacity(hs.len());
        for (lvl, &h) in hs.iter().enumerate() {
            let d: Vec<Vec<f64>> = diffs.iter().map(|path| path[s][lvl].clone()).collect();
            let mse = mean_square_error(&d)?;
            rows.push(OrderRow {
                scheme: name.clone(),
                h,
                mse,
            });
            errs.push(mse);
        }
        slopes.push((name.clone(), strong_order_fit(&hs, &errs)?));
    }
    Ok(OrderReport { rows, slopes })
}

/// Runs [`strong_errors`] and writes `order.csv`.
pub fn cmd_order(manifest: &OrderManifest) -> Result<(OrderReport, PathBuf)> {
    let report = strong_errors(manifest)?;
    fs::create_dir_all(&manifest.out)?;
    let path = manifest.out.join("order.csv");
    let mut w = create(&path)?;
    writeln!(w, "{ORDER_HEADER}")?;
    for row in &report.rows {
        let slope = report.slope(&row.scheme).unwrap();
        writeln!(
            w,
            "{},{},{},{}",
            row.scheme,
            float(row.h),
            float(row.mse),
            float(slope)
        )?;
    }
    w.flush()?;
    Ok((report, path))
}

/// One line per built-in model: name, sizes, default state and parameters.
pub fn cmd_list_models() -> String {
    let mut out = String::new();
    for name in BUILTIN_MODELS {
        let params = default_params(name).expect("builtin");
        let model = make_model::<f64>(name, &params).expect("builtin");
        let x0: Vec<String> = model.default_x0().iter().map(f64::to_string).collect();
        let params: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            out,
            "{} d={} m={} l={} x0=({}) {}",
            name,
            model.dim(),
            model.noise_count(),
            model.invariant_count(),
            x0.join(", "),
            params.join(" ")
        );
    }
    out
}
