//! SDE models in Stratonovich form
//!
//! ```text
//! dX = f(X) dt + sum_r g_r(X) o dW_r
//! ```
//!
//! together with `l` conserved quantities `I(x)` whose gradients are
//! orthogonal to `f` and every `g_r`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, matvec};
use crate::scalar::Scalar;

/// The vector fields of a model. Noise channels are indexed from zero.
///
/// Matrices are written row-major into `out`: diffusion Jacobians are
/// `d x d`, the invariant Jacobian is `l x d`.
pub trait VectorFields<T: Scalar>: Send + Sync {
    fn drift(&self, x: &[T], out: &mut [T]);
    fn diffusion(&self, r: usize, x: &[T], out: &mut [T]);
    fn diffusion_jacobian(&self, r: usize, x: &[T], out: &mut [T]);
    fn invariants(&self, x: &[T], out: &mut [T]);
    fn invariant_jacobian(&self, x: &[T], out: &mut [T]);
}

/// An autonomous Stratonovich SDE with conserved quantities.
///
/// Immutable once built; clones share the vector fields.
#[derive(Clone)]
pub struct ModelSpec<T: Scalar> {
    name: String,
    dim: usize,
    noise_count: usize,
    invariant_count: usize,
    commutative_noise: bool,
    params: BTreeMap<String, f64>,
    default_x0: Vec<T>,
    sampling_box: Option<Vec<(f64, f64)>>,
    fields: Arc<dyn VectorFields<T>>,
}

impl<T: Scalar> fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_count", &self.noise_count)
            .field("invariant_count", &self.invariant_count)
            .field("commutative_noise", &self.commutative_noise)
            .field("params", &self.params)
            .field("default_x0", &self.default_x0)
            .finish()
    }
}

impl<T: Scalar> ModelSpec<T> {
    /// Builds a model from user-supplied fields.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        noise_count: usize,
        invariant_count: usize,
        commutative_noise: bool,
        default_x0: Vec<T>,
        fields: Arc<dyn VectorFields<T>>,
    ) -> Result<Self> {
        if dim == 0 || noise_count == 0 || invariant_count == 0 {
            return Err(Error::InvalidConfig(
                "dim, noise_count and invariant_count must be at least 1".into(),
            ));
        }
        if default_x0.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: default_x0.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            dim,
            noise_count,
            invariant_count,
            commutative_noise,
            params: BTreeMap::new(),
            default_x0,
            sampling_box: None,
            fields,
        })
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// Box `[lo, hi]` per coordinate used when sampling states for validation.
    pub fn with_sampling_box(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.sampling_box = Some(bounds);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn noise_count(&self) -> usize {
        self.noise_count
    }
    pub fn invariant_count(&self) -> usize {
        self.invariant_count
    }
    pub fn commutative_noise(&self) -> bool {
        self.commutative_noise
    }
    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }
    pub fn default_x0(&self) -> &[T] {
        &self.default_x0
    }
    pub fn sampling_box(&self) -> Option<&[(f64, f64)]> {
        self.sampling_box.as_deref()
    }
    pub fn fields(&self) -> &dyn VectorFields<T> {
        self.fields.as_ref()
    }

    pub(crate) fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }

    // Unchecked evaluators used on hot paths; callers guarantee shapes.

    pub(crate) fn drift_of(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.fields.drift(x, &mut out);
        out
    }

    pub(crate) fn diffusion_of(&self, r: usize, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.fields.diffusion(r, x, &mut out);
        out
    }

    pub(crate) fn diffusion_jacobian_of(&self, r: usize, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim * self.dim];
        self.fields.diffusion_jacobian(r, x, &mut out);
        out
    }

    pub(crate) fn invariants_of(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.invariant_count];
        self.fields.invariants(x, &mut out);
        out
    }

    pub(crate) fn invariant_jacobian_of(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.invariant_count * self.dim];
        self.fields.invariant_jacobian(x, &mut out);
        out
    }

    pub fn drift(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self.drift_of(x))
    }

    pub fn diffusion(&self, r: usize, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        self.check_channel(r)?;
        Ok(self.diffusion_of(r, x))
    }

    pub fn diffusion_jacobian(&self, r: usize, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        self.check_channel(r)?;
        Ok(self.diffusion_jacobian_of(r, x))
    }

    pub fn invariant_jacobian(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self.invariant_jacobian_of(x))
    }

    fn check_channel(&self, r: usize) -> Result<()> {
        if r < self.noise_count {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange(format!(
                "noise channel {r} of {}",
                self.noise_count
            )))
        }
    }

    /// `(I^1(x), ..., I^l(x))`.
    pub fn eval_invariants(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self.invariants_of(x))
    }

    /// Itô form of the drift: `f + 1/2 sum_r (dg_r/dx) g_r`.
    pub fn ito_drift(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self.ito_drift_of(x))
    }

    pub(crate) fn ito_drift_of(&self, x: &[T]) -> Vec<T> {
        let half = T::of(0.5);
        let mut out = self.drift_of(x);
        let mut tmp = vec![T::zero(); self.dim];
        for r in 0..self.noise_count {
            let g = self.diffusion_of(r, x);
            let jac = self.diffusion_jacobian_of(r, x);
            matvec(&jac, &g, &mut tmp);
            for (o, &t) in out.iter_mut().zip(&tmp) {
                *o = *o + half * t;
            }
        }
        out
    }

    /// Evaluates `|I'(x) f(x)|` and `|I'(x) g_r(x)|` at every trial point.
    pub fn validate_conservation(&self, trial_points: &[Vec<T>], tol: T) -> ConservationReport<T> {
        let mut report = ConservationReport {
            drift_residual: T::zero(),
            diffusion_residual: T::zero(),
            worst_point: None,
            failures: Vec::new(),
            tol,
            passed: false,
        };
        let mut worst = T::zero();
        let mut proj = vec![T::zero(); self.invariant_count];
        for (idx, x) in trial_points.iter().enumerate() {
            if self.check_dim(x).is_err() || x.iter().any(|v| !v.is_finite()) {
                report.failures.push(idx);
                continue;
            }
            let jac = self.invariant_jacobian_of(x);
            matvec(&jac, &self.drift_of(x), &mut proj);
            let fres = inf_norm(&proj);
            let mut gres = T::zero();
            for r in 0..self.noise_count {
                matvec(&jac, &self.diffusion_of(r, x), &mut proj);
                gres = gres.max(inf_norm(&proj));
            }
            report.drift_residual = report.drift_residual.max(fres);
            report.diffusion_residual = report.diffusion_residual.max(gres);
            let here = fres.max(gres);
            if here > worst || report.worst_point.is_none() {
                worst = here;
                report.worst_point = Some(idx);
            }
            if !(here <= tol) {
                report.failures.push(idx);
            }
        }
        report.passed = !trial_points.is_empty() && report.failures.is_empty();
        report
    }

    /// Largest entry of `(dg_r/dx) g_s - (dg_s/dx) g_r` over all channel
    /// pairs and points.
    pub fn commutativity_defect(&self, trial_points: &[Vec<T>]) -> T {
        let d = self.dim;
        let mut worst = T::zero();
        let mut a = vec![T::zero(); d];
        let mut b = vec![T::zero(); d];
        for x in trial_points {
            let gs: Vec<_> = (0..self.noise_count)
                .map(|r| self.diffusion_of(r, x))
                .collect();
            let js: Vec<_> = (0..self.noise_count)
                .map(|r| self.diffusion_jacobian_of(r, x))
                .collect();
            for r in 0..self.noise_count {
                for s in r + 1..self.noise_count {
                    matvec(&js[r], &gs[s], &mut a);
                    matvec(&js[s], &gs[r], &mut b);
                    for (ai, bi) in a.iter().zip(&b) {
                        worst = worst.max((*ai - *bi).abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest relative deviation of the invariant Jacobian from central
    /// differences of the invariants with step `h`, relative to `max(1, |entry|)`.
    pub fn invariant_jacobian_defect(&self, trial_points: &[Vec<T>], h: T) -> T {
        let (d, l) = (self.dim, self.invariant_count);
        let two = T::of(2.0);
        let mut worst = T::zero();
        for x in trial_points {
            let jac = self.invariant_jacobian_of(x);
            let mut xp = x.clone();
            for k in 0..d {
                xp[k] = x[k] + h;
                let ip = self.invariants_of(&xp);
                xp[k] = x[k] - h;
                let im = self.invariants_of(&xp);
                xp[k] = x[k];
                for i in 0..l {
                    let fd = (ip[i] - im[i]) / (two * h);
                    let exact = jac[i * d + k];
                    worst = worst.max((fd - exact).abs() / exact.abs().max(T::one()));
                }
            }
        }
        worst
    }
}

/// Outcome of [`ModelSpec::validate_conservation`].
#[derive(Debug, Clone)]
pub struct ConservationReport<T> {
    pub drift_residual: T,
    pub diffusion_residual: T,
    pub worst_point: Option<usize>,
    /// Indices of points whose residual exceeded `tol` or that were malformed.
    pub failures: Vec<usize>,
    pub tol: T,
    pub passed: bool,
}

/// Model names understood by [`make_model`], in listing order.
pub const BUILTIN_MODELS: [&str; 3] = ["kubo", "pendulum", "lotka_volterra"];

/// Parameter values used in the reference experiments.
pub fn default_params(name: &str) -> Result<BTreeMap<String, f64>> {
    let pairs: &[(&str, f64)] = match name {
        "kubo" => &[("c", 0.5)],
        "pendulum" => &[("c1", 0.5), ("c2", 0.1)],
        "lotka_volterra" => &[("c", 0.5)],
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect())
}

fn param(name: &str, params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| Error::MissingParameter {
            model: name.to_string(),
            param: key.to_string(),
        })
}

/// Builds one of the built-in models from its named parameters.
pub fn make_model<T: Scalar>(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec<T>> {
    let pi = std::f64::consts::PI;
    let (model, bounds) = match name {
        "kubo" => {
            let c = T::of(param(name, params, "c")?);
            let m = ModelSpec::new(
                name,
                2,
                1,
                1,
                true,
                vec![T::one(), T::zero()],
                Arc::new(Kubo { c }),
            )?;
            (m, vec![(-2.0, 2.0); 2])
        }
        "pendulum" => {
            let c1 = T::of(param(name, params, "c1")?);
            let c2 = T::of(param(name, params, "c2")?);
            let m = ModelSpec::new(
                name,
                2,
                2,
                1,
                true,
                vec![T::of(0.2), T::one()],
                Arc::new(Pendulum { scales: [c1, c2] }),
            )?;
            (m, vec![(-2.0, 2.0), (-pi, pi)])
        }
        "lotka_volterra" => {
            let c = T::of(param(name, params, "c")?);
            let m = ModelSpec::new(
                name,
                3,
                1,
                2,
                true,
                vec![T::one(), T::of(2.0), T::one()],
                Arc::new(LotkaVolterra { c }),
            )?;
            (m, vec![(0.1, 3.0); 3])
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    let used: BTreeMap<String, f64> = default_params(name)?
        .keys()
        .map(|k| (k.clone(), params[k]))
        .collect();
    Ok(model.with_params(used).with_sampling_box(bounds))
}

/// Kubo oscillator: rotation driven by `dt + c o dW`, invariant `(x^2 + y^2)/2`.
struct Kubo<T> {
    c: T,
}

impl<T: Scalar> VectorFields<T> for Kubo<T> {
    fn drift(&self, x: &[T], out: &mut [T]) {
        out[0] = -x[1];
        out[1] = x[0];
    }
    fn diffusion(&self, _r: usize, x: &[T], out: &mut [T]) {
        out[0] = -self.c * x[1];
        out[1] = self.c * x[0];
    }
    fn diffusion_jacobian(&self, _r: usize, _x: &[T], out: &mut [T]) {
        out.copy_from_slice(&[T::zero(), -self.c, self.c, T::zero()]);
    }
    fn invariants(&self, x: &[T], out: &mut [T]) {
        out[0] = T::of(0.5) * (x[0] * x[0] + x[1] * x[1]);
    }
    fn invariant_jacobian(&self, x: &[T], out: &mut [T]) {
        out[0] = x[0];
        out[1] = x[1];
    }
}

/// Pendulum `v(x) = (-sin y, x)` driven by `dt + c1 o dW1 + c2 o dW2`.
struct Pendulum<T> {
    scales: [T; 2],
}

impl<T: Scalar> VectorFields<T> for Pendulum<T> {
    fn drift(&self, x: &[T], out: &mut [T]) {
        out[0] = -x[1].sin();
        out[1] = x[0];
    }
    fn diffusion(&self, r: usize, x: &[T], out: &mut [T]) {
        let c = self.scales[r];
        out[0] = -c * x[1].sin();
        out[1] = c * x[0];
    }
    fn diffusion_jacobian(&self, r: usize, x: &[T], out: &mut [T]) {
        let c = self.scales[r];
        out.copy_from_slice(&[T::zero(), -c * x[1].cos(), c, T::zero()]);
    }
    fn invariants(&self, x: &[T], out: &mut [T]) {
        out[0] = T::of(0.5) * x[0] * x[0] - x[1].cos();
    }
    fn invariant_jacobian(&self, x: &[T], out: &mut [T]) {
        out[0] = x[0];
        out[1] = x[1].sin();
    }
}

/// Cyclic Lotka-Volterra, driven by `dt + c o dW`; invariants `x+y+z`, `xyz`.
struct LotkaVolterra<T> {
    c: T,
}

impl<T: Scalar> LotkaVolterra<T> {
    fn field(x: &[T], out: &mut [T]) {
        let (a, b, c) = (x[0], x[1], x[2]);
        out[0] = a * (c - b);
        out[1] = b * (a - c);
        out[2] = c * (b - a);
    }
}

impl<T: Scalar> VectorFields<T> for LotkaVolterra<T> {
    fn drift(&self, x: &[T], out: &mut [T]) {
        Self::field(x, out);
    }
    fn diffusion(&self, _r: usize, x: &[T], out: &mut [T]) {
        Self::field(x, out);
        for o in out.iter_mut() {
            *o = *o * self.c;
        }
    }
    fn diffusion_jacobian(&self, _r: usize, x: &[T], out: &mut [T]) {
        let (a, b, c) = (x[0], x[1], x[2]);
        let k = self.c;
        out.copy_from_slice(&[
            k * (c - b),
            -k * a,
            k * a,
            k * b,
            k * (a - c),
            -k * b,
            -k * c,
            k * c,
            k * (b - a),
        ]);
    }
    fn invariants(&self, x: &[T], out: &mut [T]) {
        out[0] = x[0] + x[1] + x[2];
        out[1] = x[0] * x[1] * x[2];
    }
    fn invariant_jacobian(&self, x: &[T], out: &mut [T]) {
        let (a, b, c) = (x[0], x[1], x[2]);
        out.copy_from_slice(&[T::one(), T::one(), T::one(), b * c, a * c, a * b]);
    }
}

/// Deterministic uniform samples from the model's sampling box.
pub fn sample_states<T: Scalar>(
    model: &ModelSpec<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    let bounds = model.sampling_box().ok_or_else(|| {
        Error::InvalidConfig(format!("model `{}` has no sampling box", model.name()))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    T::of(lo + (hi - lo) * u)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(name: &str) -> ModelSpec<f64> {
        make_model(name, &default_params(name).unwrap()).unwrap()
    }

    fn with(name: &str, kv: &[(&str, f64)]) -> ModelSpec<f64> {
        let p = kv.iter().map(|&(k, v)| (k.to_string(), v)).collect();
        make_model(name, &p).unwrap()
    }

    #[test]
    fn kubo_fields_at_initial_point() {
        let m = with("kubo", &[("c", 0.5)]);
        assert_eq!(m.drift(&[1.0, 0.0]).unwrap(), vec![-0.0, 1.0]);
        assert_eq!(m.diffusion(0, &[1.0, 0.0]).unwrap(), vec![-0.0, 0.5]);
    }

    #[test]
    fn lotka_volterra_drift() {
        let m = with("lotka_volterra", &[("c", 0.5)]);
        assert_eq!(m.drift(&[1.0, 2.0, 1.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn pendulum_second_channel() {
        let m = with("pendulum", &[("c1", 0.5), ("c2", 0.1)]);
        let g = m.diffusion(1, &[0.2, 1.0]).unwrap();
        assert!((g[0] - 0.1 * -(1.0f64.sin())).abs() < 1e-16);
        assert!((g[1] - 0.1 * 0.2).abs() < 1e-16);
    }

    #[test]
    fn invariants_at_reference_points() {
        assert_eq!(
            model("kubo").eval_invariants(&[1.0, 0.0]).unwrap(),
            vec![0.5]
        );
        assert_eq!(
            model("lotka_volterra")
                .eval_invariants(&[1.0, 2.0, 1.0])
                .unwrap(),
            vec![4.0, 2.0]
        );
        let p = model("pendulum").eval_invariants(&[0.2, 1.0]).unwrap();
        assert!((p[0] - (0.02 - 1.0f64.cos())).abs() < 1e-16);
        assert!((p[0] + 0.520_302_3).abs() < 1e-7);
    }

    #[test]
    fn unknown_model_and_missing_parameter() {
        assert!(matches!(
            make_model::<f64>("duffing", &BTreeMap::new()),
            Err(Error::UnknownModel(_))
        ));
        let p = [("c1".to_string(), 0.5)].into_iter().collect();
        assert!(matches!(
            make_model::<f64>("pendulum", &p),
            Err(Error::MissingParameter { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = model("kubo");
        assert!(matches!(
            m.eval_invariants(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
        assert!(m.ito_drift(&[1.0]).is_err());
    }

    /// Central-difference Jacobian of `g_r` applied to `g_r`; independent of
    /// the analytic Jacobians.
    fn fd_ito_drift(m: &ModelSpec<f64>, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let d = m.dim();
        let mut out = m.drift(x).unwrap();
        for r in 0..m.noise_count() {
            let g = m.diffusion(r, x).unwrap();
            for (k, gk) in g.iter().enumerate() {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                let gp = m.diffusion(r, &xp).unwrap();
                let gm = m.diffusion(r, &xm).unwrap();
                for i in 0..d {
                    out[i] += 0.5 * (gp[i] - gm[i]) / (2.0 * h) * gk;
                }
            }
        }
        out
    }

    #[test]
    fn ito_drift_matches_hand_value_and_fd_oracle() {
        let m = with("kubo", &[("c", 0.5)]);
        let v = m.ito_drift(&[1.0, 0.0]).unwrap();
        assert!((v[0] + 0.125).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        let fd = fd_ito_drift(&m, &[1.0, 0.0]);
        assert!((fd[0] + 0.125).abs() < 1e-8 && (fd[1] - 1.0).abs() < 1e-8);

        for name in BUILTIN_MODELS {
            let m = model(name);
            for x in sample_states(&m, 20, 7).unwrap() {
                let a = m.ito_drift(&x).unwrap();
                let b = fd_ito_drift(&m, &x);
                for (ai, bi) in a.iter().zip(&b) {
                    assert!((ai - bi).abs() < 1e-7, "{name}: {ai} vs {bi}");
                }
            }
        }
    }

    #[test]
    fn ito_drift_without_noise_is_drift() {
        let m0 = with("kubo", &[("c", 0.0)]);
        assert_eq!(m0.ito_drift(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        let p0 = with("pendulum", &[("c1", 0.0), ("c2", 0.0)]);
        let l0 = with("lotka_volterra", &[("c", 0.0)]);
        for m in [&m0, &p0, &l0] {
            for x in sample_states(m, 50, 3).unwrap() {
                assert_eq!(m.ito_drift(&x).unwrap(), m.drift(&x).unwrap());
            }
        }
    }

    #[test]
    fn kubo_conserves_on_unit_circle() {
        let m = model("kubo");
        let pts: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let th = i as f64 * 0.1;
                vec![th.cos(), th.sin()]
            })
            .collect();
        assert!(m.validate_conservation(&pts, 1e-12).passed);
    }

    #[test]
    fn lotka_volterra_conserves_in_box() {
        let m = model("lotka_volterra");
        let pts = sample_states(&m, 100, 11).unwrap();
        let rep = m.validate_conservation(&pts, 1e-10);
        assert!(rep.passed, "{rep:?}");
    }

    struct Biased(ModelSpec<f64>);

    impl VectorFields<f64> for Biased {
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            self.0.fields().drift(x, out);
            out[0] += 1e-3;
        }
        fn diffusion(&self, r: usize, x: &[f64], out: &mut [f64]) {
            self.0.fields().diffusion(r, x, out)
        }
        fn diffusion_jacobian(&self, r: usize, x: &[f64], out: &mut [f64]) {
            self.0.fields().diffusion_jacobian(r, x, out)
        }
        fn invariants(&self, x: &[f64], out: &mut [f64]) {
            self.0.fields().invariants(x, out)
        }
        fn invariant_jacobian(&self, x: &[f64], out: &mut [f64]) {
            self.0.fields().invariant_jacobian(x, out)
        }
    }

    #[test]
    fn corrupted_drift_fails_validation() {
        let base = model("kubo");
        let bad = ModelSpec::new(
            "biased",
            2,
            1,
            1,
            true,
            vec![1.0, 0.0],
            Arc::new(Biased(base)),
        )
        .unwrap();
        // grad I = x, so the residual at (1, 0) is exactly the bias.
        let rep = bad.validate_conservation(&[vec![1.0, 0.0]], 1e-10);
        assert!(!rep.passed);
        assert!((rep.drift_residual - 1e-3).abs() < 1e-15);
        assert_eq!(rep.diffusion_residual, 0.0);
    }

    #[test]
    fn invalid_points_are_failures() {
        let m = model("kubo");
        let rep = m.validate_conservation(&[vec![f64::NAN, 0.0], vec![1.0]], 1e-10);
        assert!(!rep.passed);
        assert_eq!(rep.failures, vec![0, 1]);
        assert!(!m.validate_conservation(&[], 1e-10).passed);
    }

    #[test]
    fn builtins_are_commutative() {
        for name in BUILTIN_MODELS {
            let m = model(name);
            let pts = sample_states(&m, 100, 5).unwrap();
            assert!(m.commutativity_defect(&pts) <= 1e-10, "{name}");
        }
    }

    #[test]
    fn invariant_jacobians_match_finite_differences() {
        for name in BUILTIN_MODELS {
            let m = model(name);
            let pts = sample_states(&m, 200, 9).unwrap();
            let defect = m.invariant_jacobian_defect(&pts, 1e-6);
            assert!(defect <= 1e-6, "{name}: {defect}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_inside_box() {
        let m = model("pendulum");
        let a = sample_states(&m, 500, 1).unwrap();
        assert_eq!(a, sample_states(&m, 500, 1).unwrap());
        let pi = std::f64::consts::PI;
        assert!(a.iter().all(|x| x[0].abs() <= 2.0 && x[1].abs() <= pi));
    }
}
