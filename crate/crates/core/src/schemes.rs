//! One-step mean-square integrators and the coarse/fine propagators built
//! from them.
//!
//! Euler-Maruyama works on the Itô form of the equation (Itô-corrected
//! drift). Milstein (commutative noise) and the implicit midpoint rule use
//! the Stratonovich drift directly.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{axpy, inf_norm, matvec};
use crate::model::ModelSpec;
use crate::noise::{truncated_increment, NoiseGrid};
use crate::projection::Manifold;
use crate::scalar::Scalar;

/// A user-supplied one-step map, e.g. a model-specific higher-order Taylor
/// scheme. It receives the raw increments `dw` (one per noise channel).
pub trait StepMap<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn step(&self, model: &ModelSpec<T>, x: &[T], dt: T, dw: &[T]) -> Result<Vec<T>>;
}

#[derive(Clone)]
pub enum Scheme<T: Scalar> {
    Euler,
    Milstein,
    Midpoint,
    Custom(Arc<dyn StepMap<T>>),
}

impl<T: Scalar> Scheme<T> {
    pub fn name(&self) -> &str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Milstein => "milstein",
            Scheme::Midpoint => "midpoint",
            Scheme::Custom(map) => map.name(),
        }
    }
}

impl<T: Scalar> fmt::Debug for Scheme<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl<T: Scalar> PartialEq for Scheme<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scheme::Custom(a), Scheme::Custom(b)) => Arc::ptr_eq(a, b),
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
        }
    }
}

/// A scheme plus the settings that turn it into a propagator.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorSpec<T: Scalar> {
    pub scheme: Scheme<T>,
    /// Follow every step by a projection onto the invariant manifold.
    pub projected: bool,
    pub fixed_point_tol: T,
    pub fixed_point_max_iter: usize,
    /// Truncation constant for increments fed to implicit schemes.
    pub k_trunc: T,
}

impl<T: Scalar> PropagatorSpec<T> {
    pub fn new(scheme: Scheme<T>, projected: bool) -> Self {
        Self {
            scheme,
            projected,
            fixed_point_tol: T::tolerance(1e-14),
            fixed_point_max_iter: 50,
            k_trunc: T::of(2.0),
        }
    }

    pub fn euler() -> Self {
        Self::new(Scheme::Euler, false)
    }
    pub fn milstein() -> Self {
        Self::new(Scheme::Milstein, false)
    }
    pub fn midpoint() -> Self {
        Self::new(Scheme::Midpoint, false)
    }

    pub fn projected(mut self, on: bool) -> Self {
        self.projected = on;
        self
    }

    /// Short label: `euler`, `eulerP`, `milstein`, `milsteinP`, ...
    pub fn label(&self) -> String {
        format!(
            "{}{}",
            self.scheme.name(),
            if self.projected { "P" } else { "" }
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_point_tol > T::zero()) || self.fixed_point_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "propagator needs fixed_point_tol > 0 and fixed_point_max_iter >= 1".into(),
            ));
        }
        if !(self.k_trunc >= T::one()) {
            return Err(Error::InvalidConfig("k_trunc must be at least 1".into()));
        }
        Ok(())
    }

    /// One step of the bare scheme, without projection.
    pub fn step(&self, model: &ModelSpec<T>, x: &[T], dt: T, dw: &[T]) -> Result<Vec<T>> {
        let y = match &self.scheme {
            Scheme::Euler => euler_step(model, x, dt, dw)?,
            Scheme::Milstein => milstein_step(model, x, dt, dw)?,
            Scheme::Midpoint => midpoint_step(model, self, x, dt, dw)?,
            Scheme::Custom(map) => map.step(model, x, dt, dw)?,
        };
        if y.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(y)
    }

    /// One step followed by projection when `projected` is set.
    pub fn advance(
        &self,
        model: &ModelSpec<T>,
        manifold: &Manifold<T>,
        x: &[T],
        dt: T,
        dw: &[T],
    ) -> Result<Vec<T>> {
        let y = self.step(model, x, dt, dw)?;
        if self.projected {
            manifold.project_with_retry(model, &y)
        } else {
            Ok(y)
        }
    }

    /// `J` steps of size `dt_fine` over interval `n`, driven by its fine increments.
    pub fn propagate_fine(
        &self,
        model: &ModelSpec<T>,
        manifold: &Manifold<T>,
        x: &[T],
        grid: &NoiseGrid<T>,
        n: usize,
    ) -> Result<Vec<T>> {
        check_interval(model, grid, n)?;
        let dt = grid.dt_fine();
        let mut state = x.to_vec();
        for j in 0..grid.fine_per_coarse() {
            state = self
                .advance(model, manifold, &state, dt, grid.fine_increment(n, j))
                .map_err(|e| e.at(n, Some(j)))?;
        }
        Ok(state)
    }

    /// A single step of size `dt_coarse` over interval `n`, driven by the
    /// summed increments of that interval.
    pub fn propagate_coarse(
        &self,
        model: &ModelSpec<T>,
        manifold: &Manifold<T>,
        x: &[T],
        grid: &NoiseGrid<T>,
        n: usize,
        dt_coarse: T,
    ) -> Result<Vec<T>> {
        check_interval(model, grid, n)?;
        self.advance(model, manifold, x, dt_coarse, &grid.coarse_increments(n))
            .map_err(|e| e.at(n, None))
    }

    /// Integrates from `x0` through a sequence of increments with a fixed step.
    pub fn integrate<'a, I>(
        &self,
        model: &ModelSpec<T>,
        manifold: &Manifold<T>,
        x0: &[T],
        dt: T,
        increments: I,
    ) -> Result<Vec<T>>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let mut state = x0.to_vec();
        for (j, dw) in increments.into_iter().enumerate() {
            state = self
                .advance(model, manifold, &state, dt, dw)
                .map_err(|e| e.at(0, Some(j)))?;
        }
        Ok(state)
    }
}

impl<T: Scalar> FromStr for PropagatorSpec<T> {
    type Err = Error;

    /// Accepts `euler`, `milstein`/`mil`, `midpoint`/`mid`, each optionally
    /// suffixed with `P` (projected), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, projected) = match lower.strip_suffix('p') {
            Some(b) if !b.is_empty() => (b, true),
            _ => (lower.as_str(), false),
        };
        let scheme = match base {
            "euler" | "em" => Scheme::Euler,
            "milstein" | "mil" => Scheme::Milstein,
            "midpoint" | "mid" => Scheme::Midpoint,
            _ => return Err(Error::Parse(format!("unknown scheme `{s}`"))),
        };
        Ok(Self::new(scheme, projected))
    }
}

fn check_interval<T: Scalar>(model: &ModelSpec<T>, grid: &NoiseGrid<T>, n: usize) -> Result<()> {
    if grid.noise_count() != model.noise_count() {
        return Err(Error::DimensionMismatch {
            expected: model.noise_count(),
            got: grid.noise_count(),
        });
    }
    if n >= grid.coarse_count() {
        return Err(Error::IndexOutOfRange(format!(
            "interval {n} of {}",
            grid.coarse_count()
        )));
    }
    Ok(())
}

fn check_step<T: Scalar>(model: &ModelSpec<T>, x: &[T], dt: T, dw: &[T]) -> Result<()> {
    model.check_dim(x)?;
    if dw.len() != model.noise_count() {
        return Err(Error::DimensionMismatch {
            expected: model.noise_count(),
            got: dw.len(),
        });
    }
    if !(dt >= T::zero()) {
        return Err(Error::InvalidConfig(
            "step size must be non-negative".into(),
        ));
    }
    Ok(())
}

/// `x + a(x) dt + sum_r g_r(x) dw_r` with the Itô drift `a`.
pub fn euler_step<T: Scalar>(model: &ModelSpec<T>, x: &[T], dt: T, dw: &[T]) -> Result<Vec<T>> {
    check_step(model, x, dt, dw)?;
    let mut y = x.to_vec();
    axpy(dt, &model.ito_drift_of(x), &mut y);
    for (r, &w) in dw.iter().enumerate() {
        axpy(w, &model.diffusion_of(r, x), &mut y);
    }
    Ok(y)
}

/// Stratonovich Milstein for commutative noise:
/// `x + f dt + sum_r g_r dw_r + 1/2 sum_{r,s} (dg_r/dx) g_s dw_r dw_s`.
pub fn milstein_step<T: Scalar>(model: &ModelSpec<T>, x: &[T], dt: T, dw: &[T]) -> Result<Vec<T>> {
    if !model.commutative_noise() {
        return Err(Error::UnsupportedScheme("milstein".into()));
    }
    check_step(model, x, dt, dw)?;
    let d = model.dim();
    let mut y = x.to_vec();
    axpy(dt, &model.drift_of(x), &mut y);
    // noise = sum_s g_s dw_s, so the double sum is sum_r (dg_r/dx) noise dw_r.
    let mut noise = vec![T::zero(); d];
    for (s, &w) in dw.iter().enumerate() {
        axpy(w, &model.diffusion_of(s, x), &mut noise);
    }
    let mut tmp = vec![T::zero(); d];
    for (r, &w) in dw.iter().enumerate() {
        matvec(&model.diffusion_jacobian_of(r, x), &noise, &mut tmp);
        axpy(T::of(0.5) * w, &tmp, &mut y);
    }
    for (yi, ni) in y.iter_mut().zip(&noise) {
        *yi = *yi + *ni;
    }
    Ok(y)
}

/// Implicit midpoint `Y = x + f(m) dt + sum_r g_r(m) z_r`, `m = (x + Y)/2`,
/// with `z` the truncated increments, solved by fixed-point iteration.
pub fn midpoint_step<T: Scalar>(
    model: &ModelSpec<T>,
    prop: &PropagatorSpec<T>,
    x: &[T],
    dt: T,
    dw: &[T],
) -> Result<Vec<T>> {
    check_step(model, x, dt, dw)?;
    let zeta: Vec<T> = dw
        .iter()
        .map(|&w| truncated_increment(w, dt, prop.k_trunc))
        .collect();
    let half = T::of(0.5);
    let map = |at: &[T]| -> Vec<T> {
        let mut y = x.to_vec();
        axpy(dt, &model.drift_of(at), &mut y);
        for (r, &z) in zeta.iter().enumerate() {
            axpy(z, &model.diffusion_of(r, at), &mut y);
        }
        y
    };

    let mut y = map(x);
    let mut mid = vec![T::zero(); x.len()];
    let mut change = T::infinity();
    for _ in 0..prop.fixed_point_max_iter {
        for ((m, &a), &b) in mid.iter_mut().zip(x).zip(&y) {
            *m = half * (a + b);
        }
        let next = map(&mid);
        change = next
            .iter()
            .zip(&y)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        y = next;
        if !change.is_finite() {
            return Err(Error::NonFinite);
        }
        if change <= prop.fixed_point_tol * inf_norm(&y).max(T::one()) {
            return Ok(y);
        }
    }
    Err(Error::ImplicitSolve {
        residual: change.as_f64(),
    })
}
