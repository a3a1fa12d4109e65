//! Parareal iteration for SDEs, with optional projection of every corrected
//! state onto the invariant manifold.
//!
//! ```text
//! X[n+1]^(k+1) = P( G(X[n]^(k+1)) + F^J(X[n]^(k)) - G(X[n]^(k)) )
//! ```
//!
//! `G` is one coarse step of size `dT`, `F^J` is `J` fine steps of size
//! `dT/J`, and `P` is the projection (or the identity when the correction is
//! unprojected). Both propagators are driven by the same [`NoiseGrid`].
//!
//! The correction is evaluated as `F + (G_new - G_old)`. Once `X[n]` has
//! stopped changing, `G_new` and `G_old` are bitwise equal and the update
//! reproduces the fine value exactly, so after `k` iterations the first `k`
//! nodes coincide with the sequential fine solution to the last bit.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{self, ExperimentReport, RunEcho, WallTimes};
use crate::model::ModelSpec;
use crate::noise::NoiseGrid;
use crate::projection::{Manifold, ProjectionConfig};
use crate::scalar::Scalar;
use crate::schemes::PropagatorSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct PararealConfig<T: Scalar> {
    /// Final time `T`.
    pub horizon: T,
    /// Coarse step `dT`; `T / dT` must be an integer.
    pub coarse_step: T,
    /// Fine steps per coarse interval (`J`).
    pub fine_steps: usize,
    pub coarse: PropagatorSpec<T>,
    pub fine: PropagatorSpec<T>,
    pub correction_projection: bool,
    pub k_max: usize,
    pub stop_tol: T,
    pub projection: ProjectionConfig<T>,
    pub x0: Vec<T>,
}

impl<T: Scalar> PararealConfig<T> {
    /// Config with `k_max = N`, `stop_tol = 1e-12`, unprojected correction and
    /// the model's default initial state.
    pub fn new(
        model: &ModelSpec<T>,
        horizon: T,
        coarse_step: T,
        fine_steps: usize,
        coarse: PropagatorSpec<T>,
        fine: PropagatorSpec<T>,
    ) -> Result<Self> {
        let mut cfg = Self {
            horizon,
            coarse_step,
            fine_steps,
            coarse,
            fine,
            correction_projection: false,
            k_max: 1,
            stop_tol: T::tolerance(1e-12),
            projection: ProjectionConfig::default(),
            x0: model.default_x0().to_vec(),
        };
        cfg.k_max = cfg.intervals()?;
        Ok(cfg)
    }

    pub fn with_correction_projection(mut self, on: bool) -> Self {
        self.correction_projection = on;
        self
    }

    /// `N = T / dT`.
    pub fn intervals(&self) -> Result<usize> {
        if !(self.horizon > T::zero()) || !(self.coarse_step > T::zero()) {
            return Err(Error::InvalidConfig("T and dT must be positive".into()));
        }
        let ratio = (self.horizon / self.coarse_step).as_f64();
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "T / dT = {ratio} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn fine_step(&self) -> T {
        self.coarse_step / T::of(self.fine_steps as f64)
    }

    pub fn validate(&self, model: &ModelSpec<T>) -> Result<usize> {
        let n = self.intervals()?;
        if self.fine_steps == 0 {
            return Err(Error::InvalidConfig("J must be at least 1".into()));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        self.coarse.validate()?;
        self.fine.validate()?;
        self.projection.validate()?;
        model.check_dim(&self.x0)?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(n)
    }

    pub fn manifold(&self, model: &ModelSpec<T>) -> Result<Manifold<T>> {
        Manifold::through(model, &self.x0, self.projection)
    }

    /// Checks that a grid was generated for this config and model.
    pub fn check_grid(&self, model: &ModelSpec<T>, grid: &NoiseGrid<T>) -> Result<()> {
        let n = self.intervals()?;
        if grid.coarse_count() != n
            || grid.fine_per_coarse() != self.fine_steps
            || grid.noise_count() != model.noise_count()
        {
            return Err(Error::InvalidConfig(format!(
                "grid shape {}x{}x{} does not match N={n}, J={}, m={}",
                grid.coarse_count(),
                grid.fine_per_coarse(),
                grid.noise_count(),
                self.fine_steps,
                model.noise_count()
            )));
        }
        let dt = self.fine_step();
        if (grid.dt_fine() - dt).abs() > T::of(1e-9) * dt {
            return Err(Error::InvalidConfig(format!(
                "grid step {} does not match dT/J = {dt}",
                grid.dt_fine()
            )));
        }
        Ok(())
    }

    pub fn echo(&self, model: &ModelSpec<T>) -> RunEcho {
        RunEcho {
            model: model.name().to_string(),
            params: model.params().clone(),
            horizon: self.horizon.as_f64(),
            coarse_step: self.coarse_step.as_f64(),
            fine_steps: self.fine_steps,
            coarse: self.coarse.label(),
            fine: self.fine.label(),
            correction_projection: self.correction_projection,
            k_max: self.k_max,
            stop_tol: self.stop_tol.as_f64(),
        }
    }
}

fn coarse_step<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    manifold: &Manifold<T>,
    grid: &NoiseGrid<T>,
    x: &[T],
    n: usize,
) -> Result<Vec<T>> {
    cfg.coarse
        .propagate_coarse(model, manifold, x, grid, n, cfg.coarse_step)
}

/// Coarse sweep from `x0`: `X[n+1] = G(X[n])`. Returns `N + 1` states.
pub fn initialize<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    grid: &NoiseGrid<T>,
) -> Result<Vec<Vec<T>>> {
    let n = cfg.validate(model)?;
    cfg.check_grid(model, grid)?;
    let manifold = cfg.manifold(model)?;
    initialize_on(model, cfg, &manifold, grid, n)
}

fn initialize_on<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    manifold: &Manifold<T>,
    grid: &NoiseGrid<T>,
    intervals: usize,
) -> Result<Vec<Vec<T>>> {
    let mut states = Vec::with_capacity(intervals + 1);
    states.push(cfg.x0.clone());
    for n in 0..intervals {
        let next = coarse_step(model, cfg, manifold, grid, &states[n], n)?;
        states.push(next);
    }
    Ok(states)
}

/// `F^J(X[n])` for every interval, computed in parallel. Element `n` is the
/// fine value at `T[n+1]`.
pub fn fine_sweep<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    grid: &NoiseGrid<T>,
    current: &[Vec<T>],
) -> Result<Vec<Vec<T>>> {
    let n = cfg.validate(model)?;
    cfg.check_grid(model, grid)?;
    if current.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: current.len(),
        });
    }
    fine_sweep_on(model, cfg, &cfg.manifold(model)?, grid, current)
}

fn fine_sweep_on<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    manifold: &Manifold<T>,
    grid: &NoiseGrid<T>,
    current: &[Vec<T>],
) -> Result<Vec<Vec<T>>> {
    let results: Vec<Result<Vec<T>>> = current[..current.len() - 1]
        .par_iter()
        .enumerate()
        .map(|(n, x)| cfg.fine.propagate_fine(model, manifold, x, grid, n))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::collect(errors))
    }
}

/// Output of one sequential correction sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrected<T> {
    /// `X^(k+1)`, `N + 1` states.
    pub states: Vec<Vec<T>>,
    /// `G(X[n]^(k+1))` for `n = 0..N`, reused as the old coarse term next time.
    pub coarse_cache: Vec<Vec<T>>,
}

/// Sequential correction. `coarse_cache[n]` must hold `G(prev[n])`.
pub fn correct<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    grid: &NoiseGrid<T>,
    fine_vals: &[Vec<T>],
    coarse_cache: &[Vec<T>],
) -> Result<Corrected<T>> {
    let n = cfg.validate(model)?;
    cfg.check_grid(model, grid)?;
    if fine_vals.len() != n || coarse_cache.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: fine_vals.len().min(coarse_cache.len()),
        });
    }
    correct_on(
        model,
        cfg,
        &cfg.manifold(model)?,
        grid,
        fine_vals,
        coarse_cache,
    )
}

fn correct_on<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    manifold: &Manifold<T>,
    grid: &NoiseGrid<T>,
    fine_vals: &[Vec<T>],
    coarse_cache: &[Vec<T>],
) -> Result<Corrected<T>> {
    let intervals = fine_vals.len();
    let mut states = Vec::with_capacity(intervals + 1);
    let mut cache = Vec::with_capacity(intervals);
    states.push(cfg.x0.clone());
    for n in 0..intervals {
        let g_new = coarse_step(model, cfg, manifold, grid, &states[n], n)?;
        let y: Vec<T> = fine_vals[n]
            .iter()
            .zip(g_new.iter().zip(&coarse_cache[n]))
            .map(|(&f, (&gn, &go))| f + (gn - go))
            .collect();
        let next = if cfg.correction_projection {
            manifold.project(model, &y).map_err(|e| e.at(n, None))?
        } else {
            y
        };
        states.push(next);
        cache.push(g_new);
    }
    Ok(Corrected {
        states,
        coarse_cache: cache,
    })
}

/// Sequential fine solution at the coarse nodes: `N * J` fine steps,
/// followed at every node by the correction projection when it is enabled.
/// This is the fixed point the parareal iterates converge to.
pub fn reference_solution<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    grid: &NoiseGrid<T>,
) -> Result<Vec<Vec<T>>> {
    let n = cfg.validate(model)?;
    cfg.check_grid(model, grid)?;
    reference_on(model, cfg, &cfg.manifold(model)?, grid, n)
}

fn reference_on<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    manifold: &Manifold<T>,
    grid: &NoiseGrid<T>,
    intervals: usize,
) -> Result<Vec<Vec<T>>> {
    let mut states = Vec::with_capacity(intervals + 1);
    states.push(cfg.x0.clone());
    for n in 0..intervals {
        let mut next = cfg
            .fine
            .propagate_fine(model, manifold, &states[n], grid, n)?;
        if cfg.correction_projection {
            next = manifold.project(model, &next).map_err(|e| e.at(n, None))?;
        }
        states.push(next);
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T> {
    pub k: usize,
    /// Largest `|I(X[n]) - I(X0)|_inf` over `n >= 1`.
    pub invariant_max: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PararealState<T> {
    /// Number of completed correction sweeps.
    pub k: usize,
    /// `X^(k)`, `N + 1` states.
    pub current: Vec<Vec<T>>,
    /// `G(X[n]^(k))` for `n = 0..N`.
    pub coarse_cache: Vec<Vec<T>>,
    /// All iterates `X^(0)..X^(k)` when history is kept.
    pub history: Option<Vec<Vec<Vec<T>>>>,
    pub trace: Vec<IterationTrace<T>>,
}

/// Parareal on a single sample path.
pub struct PararealSolver<'a, T: Scalar> {
    model: &'a ModelSpec<T>,
    cfg: &'a PararealConfig<T>,
    grid: &'a NoiseGrid<T>,
    manifold: Manifold<T>,
    intervals: usize,
    state: PararealState<T>,
}

impl<'a, T: Scalar> PararealSolver<'a, T> {
    /// Validates the inputs and runs the coarse initialization.
    pub fn new(
        model: &'a ModelSpec<T>,
        cfg: &'a PararealConfig<T>,
        grid: &'a NoiseGrid<T>,
        keep_history: bool,
    ) -> Result<Self> {
        let intervals = cfg.validate(model)?;
        cfg.check_grid(model, grid)?;
        let manifold = cfg.manifold(model)?;
        let current = initialize_on(model, cfg, &manifold, grid, intervals)?;
        let coarse_cache = current[1..].to_vec();
        let trace = vec![IterationTrace {
            k: 0,
            invariant_max: invariant_max(model, &manifold, &current),
        }];
        let history = keep_history.then(|| vec![current.clone()]);
        Ok(Self {
            model,
            cfg,
            grid,
            manifold,
            intervals,
            state: PararealState {
                k: 0,
                current,
                coarse_cache,
                history,
                trace,
            },
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn manifold(&self) -> &Manifold<T> {
        &self.manifold
    }

    pub fn state(&self) -> &PararealState<T> {
        &self.state
    }

    pub fn into_state(self) -> PararealState<T> {
        self.state
    }

    /// Fine propagation from the current iterate (the parallel phase).
    pub fn sweep(&self) -> Result<Vec<Vec<T>>> {
        fine_sweep_on(
            self.model,
            self.cfg,
            &self.manifold,
            self.grid,
            &self.state.current,
        )
    }

    /// Applies the sequential correction with fine values from [`sweep`](Self::sweep).
    pub fn apply(&mut self, fine_vals: &[Vec<T>]) -> Result<()> {
        let Corrected {
            states,
            coarse_cache,
        } = correct_on(
            self.model,
            self.cfg,
            &self.manifold,
            self.grid,
            fine_vals,
            &self.state.coarse_cache,
        )?;
        self.state.k += 1;
        self.state.trace.push(IterationTrace {
            k: self.state.k,
            invariant_max: invariant_max(self.model, &self.manifold, &states),
        });
        if let Some(h) = self.state.history.as_mut() {
            h.push(states.clone());
        }
        self.state.current = states;
        self.state.coarse_cache = coarse_cache;
        Ok(())
    }

    pub fn iterate(&mut self) -> Result<()> {
        let fine = self.sweep()?;
        self.apply(&fine)
    }

    pub fn reference(&self) -> Result<Vec<Vec<T>>> {
        reference_on(
            self.model,
            self.cfg,
            &self.manifold,
            self.grid,
            self.intervals,
        )
    }

    /// Iterates this path alone until `|X[N]^(k) - X*[N]| <= stop_tol` or `k_max`.
    pub fn solve(&mut self) -> Result<bool> {
        let reference = self.reference()?;
        let target = &reference[self.intervals];
        for _ in 0..self.cfg.k_max.min(self.intervals) {
            self.iterate()?;
            let last = &self.state.current[self.intervals];
            let err = metrics::distance(last, target);
            if err <= self.cfg.stop_tol {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

fn invariant_max<T: Scalar>(model: &ModelSpec<T>, manifold: &Manifold<T>, states: &[Vec<T>]) -> T {
    states[1..]
        .iter()
        .fold(T::zero(), |m, x| m.max(manifold.defect(model, x)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Iteration whose trajectory feeds the invariant-error series. `None`
    /// (or anything past the stopping iteration) uses the final iterate.
    pub series_iteration: Option<usize>,
}

fn gather<R>(results: Vec<Result<R>>) -> Result<Vec<R>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (p, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => errors.push(e.on_path(p)),
        }
    }
    if errors.is_empty() {
        Ok(ok)
    } else {
        Err(Error::collect(errors))
    }
}

/// Runs parareal on every path in lockstep and measures the root-mean-square
/// distance of `X[N]^(k)` to the per-path reference after each iteration.
pub fn run<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    paths: &[NoiseGrid<T>],
    opts: &RunOptions,
) -> Result<ExperimentReport<T>> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no sample paths"));
    }
    cfg.validate(model)?;
    match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(|| run_in_pool(model, cfg, paths, opts)),
        None => run_in_pool(model, cfg, paths, opts),
    }
}

fn run_in_pool<T: Scalar>(
    model: &ModelSpec<T>,
    cfg: &PararealConfig<T>,
    paths: &[NoiseGrid<T>],
    opts: &RunOptions,
) -> Result<ExperimentReport<T>> {
    let mut wall = WallTimes::default();
    let clock = Instant::now();
    let mut solvers = gather(
        paths
            .par_iter()
            .map(|g| PararealSolver::new(model, cfg, g, false))
            .collect(),
    )?;
    wall.initialize = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let references: Vec<Vec<T>> = gather(
        solvers
            .par_iter()
            .map(|s| s.reference().map(|mut r| r.pop().unwrap()))
            .collect(),
    )?;
    wall.reference = clock.elapsed().as_secs_f64();

    let intervals = solvers[0].intervals();
    let manifold = solvers[0].manifold().clone();
    let final_error = |solvers: &[PararealSolver<'_, T>]| -> Result<T> {
        let diffs: Vec<Vec<T>> = solvers
            .iter()
            .zip(&references)
            .map(|(s, r)| {
                s.state().current[intervals]
                    .iter()
                    .zip(r)
                    .map(|(&a, &b)| a - b)
                    .collect()
            })
            .collect();
        metrics::mean_square_error(&diffs)
    };
    let invariant_peak = |solvers: &[PararealSolver<'_, T>]| -> T {
        solvers
            .iter()
            .map(|s| s.state().trace.last().unwrap().invariant_max)
            .fold(T::zero(), T::max)
    };

    let mut mse = vec![final_error(&solvers)?];
    let mut inv = vec![invariant_peak(&solvers)];
    let mut series_states: Option<Vec<Vec<Vec<T>>>> = None;
    let snapshot = |solvers: &[PararealSolver<'_, T>]| -> Vec<Vec<Vec<T>>> {
        solvers.iter().map(|s| s.state().current.clone()).collect()
    };
    if opts.series_iteration == Some(0) {
        series_states = Some(snapshot(&solvers));
    }

    let k_limit = cfg.k_max.min(intervals);
    let mut converged = false;
    let mut k = 0;
    while k < k_limit {
        let clock = Instant::now();
        let fine: Vec<Vec<Vec<T>>> = gather(solvers.par_iter().map(|s| s.sweep()).collect())?;
        wall.fine_sweep += clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        gather(
            solvers
                .par_iter_mut()
                .zip(fine.par_iter())
                .map(|(s, f)| s.apply(f))
                .collect(),
        )?;
        wall.correction += clock.elapsed().as_secs_f64();
        k += 1;

        let err = final_error(&solvers)?;
        mse.push(err);
        inv.push(invariant_peak(&solvers));
        if opts.series_iteration == Some(k) {
            series_states = Some(snapshot(&solvers));
        }
        if err <= cfg.stop_tol {
            converged = true;
            break;
        }
    }

    let series_iteration = match opts.series_iteration {
        Some(s) if s <= k => s,
        _ => k,
    };
    let states = series_states.unwrap_or_else(|| snapshot(&solvers));
    let per_path: Vec<Vec<Vec<T>>> = states
        .iter()
        .map(|traj| metrics::invariant_error_series(model, traj, manifold.target()))
        .collect::<Result<_>>()?;
    let (series_max, series_mean) = metrics::aggregate_series(&per_path);
    let step = cfg.coarse_step;
    Ok(ExperimentReport {
        config: cfg.echo(model),
        per_iteration_mse: mse,
        per_iteration_invariant_max: inv,
        series_times: (0..=intervals).map(|n| step * T::of(n as f64)).collect(),
        invariant_error_series: series_max,
        invariant_error_mean: series_mean,
        series_iteration,
        stop_iteration: k,
        converged,
        path_count: paths.len(),
        wall_times: wall,
    })
}
