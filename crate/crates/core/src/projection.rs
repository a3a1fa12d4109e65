//! Projection onto the invariant manifold `{x : I(x) = I(X0)}`.
//!
//! A state `x_hat` is moved along the columns of `Phi = I'(x_hat)^T`:
//! `x_bar = x_hat + Phi * lambda`, with `lambda` (length `l`) found by Newton
//! iteration on `F(lambda) = I(x_hat + Phi * lambda) - target`.

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, solve_in_place};
use crate::model::ModelSpec;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig<T> {
    /// Bound on `|I(x_bar) - target|_inf`.
    pub newton_tol: T,
    pub newton_max_iter: usize,
    /// Re-evaluate the Newton matrix `I'(x) Phi` at every iterate (full
    /// Newton). When false it stays frozen at `x_hat`.
    pub jacobian_refresh: bool,
}

impl<T: Scalar> Default for ProjectionConfig<T> {
    fn default() -> Self {
        Self {
            newton_tol: T::tolerance(1e-14),
            newton_max_iter: 20,
            jacobian_refresh: false,
        }
    }
}

impl<T: Scalar> ProjectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > T::zero()) || self.newton_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "projection needs newton_tol > 0 and newton_max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projected<T> {
    pub state: Vec<T>,
    pub lambda: Vec<T>,
    pub iterations: usize,
    pub residual: T,
}

/// Projects `x_hat` onto the level set `I(x) = target`.
pub fn project<T: Scalar>(
    model: &ModelSpec<T>,
    x_hat: &[T],
    target: &[T],
    cfg: &ProjectionConfig<T>,
) -> Result<Projected<T>> {
    model.check_dim(x_hat)?;
    if target.len() != model.invariant_count() {
        return Err(Error::DimensionMismatch {
            expected: model.invariant_count(),
            got: target.len(),
        });
    }
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (d, l) = (model.dim(), model.invariant_count());

    // phi_t is I'(x_hat), i.e. Phi stored transposed (l x d).
    let phi_t = model.invariant_jacobian_of(x_hat);
    let newton_matrix = |x: &[T]| -> Vec<T> {
        let jac = model.invariant_jacobian_of(x);
        let mut m = vec![T::zero(); l * l];
        for i in 0..l {
            for k in 0..l {
                m[i * l + k] = (0..d).map(|c| jac[i * d + c] * phi_t[k * d + c]).sum();
            }
        }
        m
    };

    let frozen = if cfg.jacobian_refresh {
        None
    } else {
        Some(newton_matrix(x_hat))
    };
    let mut lambda = vec![T::zero(); l];
    let mut x = x_hat.to_vec();
    let mut iterations = 0;
    loop {
        let mut residual: Vec<T> = model
            .invariants_of(&x)
            .iter()
            .zip(target)
            .map(|(&a, &b)| a - b)
            .collect();
        let res = inf_norm(&residual);
        if !res.is_finite() {
            return Err(Error::NonFinite);
        }
        if res <= cfg.newton_tol {
            return Ok(Projected {
                state: x,
                lambda,
                iterations,
                residual: res,
            });
        }
        if iterations == cfg.newton_max_iter {
            return Err(Error::ProjectionNotConverged {
                residual: res.as_f64(),
            });
        }
        let mut m = match &frozen {
            Some(m) => m.clone(),
            None => newton_matrix(&x),
        };
        for r in residual.iter_mut() {
            *r = -*r;
        }
        solve_in_place(&mut m, &mut residual).ok_or(Error::ProjectionSingular)?;
        for (lam, delta) in lambda.iter_mut().zip(&residual) {
            *lam = *lam + *delta;
        }
        for (c, xc) in x.iter_mut().enumerate() {
            *xc = x_hat[c] + (0..l).map(|i| phi_t[i * d + c] * lambda[i]).sum::<T>();
        }
        iterations += 1;
    }
}

/// The invariant manifold through a fixed initial state, with the solver
/// settings used to project onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold<T> {
    target: Vec<T>,
    cfg: ProjectionConfig<T>,
}

impl<T: Scalar> Manifold<T> {
    pub fn through(model: &ModelSpec<T>, x0: &[T], cfg: ProjectionConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            target: model.eval_invariants(x0)?,
            cfg,
        })
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn config(&self) -> &ProjectionConfig<T> {
        &self.cfg
    }

    /// Single attempt with the configured solver.
    pub fn project(&self, model: &ModelSpec<T>, x: &[T]) -> Result<Vec<T>> {
        project(model, x, &self.target, &self.cfg).map(|p| p.state)
    }

    /// As [`project`](Self::project), retrying once with full Newton if the
    /// configured solver fails.
    pub fn project_with_retry(&self, model: &ModelSpec<T>, x: &[T]) -> Result<Vec<T>> {
        match project(model, x, &self.target, &self.cfg) {
            Ok(p) => Ok(p.state),
            Err(first @ (Error::ProjectionNotConverged { .. } | Error::ProjectionSingular))
                if !self.cfg.jacobian_refresh =>
            {
                let full = ProjectionConfig {
                    jacobian_refresh: true,
                    ..self.cfg
                };
                project(model, x, &self.target, &full)
                    .map(|p| p.state)
                    .map_err(|_| first)
            }
            Err(e) => Err(e),
        }
    }

    /// `|I(x) - target|_inf`.
    pub fn defect(&self, model: &ModelSpec<T>, x: &[T]) -> T {
        model
            .invariants_of(x)
            .iter()
            .zip(&self.target)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_params, make_model, sample_states, BUILTIN_MODELS};
    use proptest::prelude::*;

    fn model(name: &str) -> ModelSpec<f64> {
        make_model(name, &default_params(name).unwrap()).unwrap()
    }

    #[test]
    fn on_manifold_is_fixed_point() {
        let m = model("kubo");
        let p = project(&m, &[0.6, 0.8], &[0.5], &ProjectionConfig::default()).unwrap();
        assert_eq!(p.state, vec![0.6, 0.8]);
        assert_eq!(p.lambda, vec![0.0]);
        assert_eq!(p.iterations, 0);
    }

    #[test]
    fn kubo_radial_projection() {
        let m = model("kubo");
        let p = project(&m, &[1.1, 0.0], &[0.5], &ProjectionConfig::default()).unwrap();
        assert!((p.state[0] - 1.0).abs() < 1e-14);
        assert_eq!(p.state[1], 0.0);
        assert!((p.lambda[0] - (1.0 / 1.1 - 1.0)).abs() < 1e-14);
        assert!((p.lambda[0] + 0.090_909_1).abs() < 1e-7);
    }

    /// Independent oracle: full Newton on the 2x2 system in closed form,
    /// iterated far past convergence.
    fn lv_oracle(xh: [f64; 3], target: [f64; 2]) -> [f64; 3] {
        let phi = [
            [1.0, 1.0, 1.0],
            [xh[1] * xh[2], xh[0] * xh[2], xh[0] * xh[1]],
        ];
        let (mut a, mut b) = (0.0f64, 0.0f64);
        let at = |a: f64, b: f64| [0, 1, 2].map(|i| xh[i] + a * phi[0][i] + b * phi[1][i]);
        for _ in 0..100 {
            let x = at(a, b);
            let f1 = x[0] + x[1] + x[2] - target[0];
            let f2 = x[0] * x[1] * x[2] - target[1];
            let g = [x[1] * x[2], x[0] * x[2], x[0] * x[1]];
            let dot = |u: &[f64; 3], v: &[f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            let (j11, j12) = (dot(&[1.0; 3], &phi[0]), dot(&[1.0; 3], &phi[1]));
            let (j21, j22) = (dot(&g, &phi[0]), dot(&g, &phi[1]));
            let det = j11 * j22 - j12 * j21;
            a -= (j22 * f1 - j12 * f2) / det;
            b -= (-j21 * f1 + j11 * f2) / det;
        }
        at(a, b)
    }

    #[test]
    fn lotka_volterra_projection_hits_both_invariants() {
        let m = model("lotka_volterra");
        let xh = [1.02, 1.97, 1.02];
        let p = project(&m, &xh, &[4.0, 2.0], &ProjectionConfig::default()).unwrap();
        let x = &p.state;
        assert!((x[0] + x[1] + x[2] - 4.0).abs() <= 1e-14);
        assert!((x[0] * x[1] * x[2] - 2.0).abs() <= 1e-14);
        let o = lv_oracle(xh, [4.0, 2.0]);
        for i in 0..3 {
            assert!((x[i] - o[i]).abs() < 1e-12, "{x:?} vs {o:?}");
        }
    }

    #[test]
    fn full_newton_agrees_with_simplified() {
        let m = model("lotka_volterra");
        let xh = [1.02, 1.97, 1.02];
        let full = ProjectionConfig {
            jacobian_refresh: true,
            ..ProjectionConfig::default()
        };
        let a = project(&m, &xh, &[4.0, 2.0], &full).unwrap();
        let b = project(&m, &xh, &[4.0, 2.0], &ProjectionConfig::default()).unwrap();
        assert!(a.iterations <= b.iterations);
        for i in 0..3 {
            assert!((a.state[i] - b.state[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_direction_is_reported() {
        // Phi = grad I = 0 at the origin.
        let m = model("kubo");
        assert!(matches!(
            project(&m, &[0.0, 0.0], &[0.5], &ProjectionConfig::default()),
            Err(Error::ProjectionSingular)
        ));
    }

    #[test]
    fn non_convergence_carries_residual() {
        let m = model("kubo");
        let cfg = ProjectionConfig {
            newton_max_iter: 1,
            ..ProjectionConfig::default()
        };
        match project(&m, &[1.5, 0.0], &[0.5], &cfg) {
            Err(Error::ProjectionNotConverged { residual }) => assert!(residual > 1e-14),
            other => panic!("{other:?}"),
        }
        let man = Manifold::through(&m, &[1.0, 0.0], cfg).unwrap();
        let x = man.project_with_retry(&m, &[1.5, 0.0]);
        assert!(x.is_err(), "one full-Newton step cannot reach 1e-14 either");
    }

    #[test]
    fn retry_uses_full_newton() {
        let m = model("kubo");
        let cfg = ProjectionConfig {
            newton_max_iter: 6,
            ..ProjectionConfig::default()
        };
        let man = Manifold::through(&m, &[1.0, 0.0], cfg).unwrap();
        assert!(man.project(&m, &[1.5, 0.0]).is_err());
        let x = man.project_with_retry(&m, &[1.5, 0.0]).unwrap();
        assert!(man.defect(&m, &x) <= 1e-14);
    }

    #[test]
    fn dimension_checks() {
        let m = model("kubo");
        let cfg = ProjectionConfig::default();
        assert!(project(&m, &[1.0], &[0.5], &cfg).is_err());
        assert!(project(&m, &[1.0, 0.0], &[0.5, 1.0], &cfg).is_err());
        assert!(matches!(
            project(&m, &[f64::NAN, 0.0], &[0.5], &cfg),
            Err(Error::NonFinite)
        ));
    }

    fn perturbed(seed: u64, name: &str, scale: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        // Pairs of (point on manifold through a sampled state, perturbed copy).
        let m = model(name);
        let base = sample_states(&m, 50, seed).unwrap();
        let noise = sample_states(&m, 50, seed + 1).unwrap();
        base.into_iter()
            .zip(noise)
            .map(|(x, e)| {
                let bounds = m.sampling_box().unwrap();
                let nx = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let y: Vec<f64> = x
                    .iter()
                    .zip(&e)
                    .zip(bounds)
                    .map(|((&xi, &ei), &(lo, hi))| {
                        let unit = 2.0 * (ei - lo) / (hi - lo) - 1.0;
                        xi + scale * nx * unit
                    })
                    .collect();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn proximity_to_manifold() {
        let cfg = ProjectionConfig::default();
        for name in BUILTIN_MODELS {
            let m = model(name);
            for (x, y) in perturbed(21, name, 0.1) {
                let p = Manifold::through(&m, &x, cfg)
                    .unwrap()
                    .project_with_retry(&m, &y)
                    .unwrap();
                let moved =
                    crate::linalg::norm2(&p.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
                let dist_upper =
                    crate::linalg::norm2(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
                // |x - y| bounds dist(y, M) from above, so this is implied by C <= 10.
                assert!(
                    moved <= 10.0 * dist_upper + 1e-14,
                    "{name}: {moved} vs {dist_upper}"
                );
            }
        }
    }

    #[test]
    fn kubo_projection_is_radial_rescaling() {
        let m = model("kubo");
        for (x, _) in perturbed(3, "kubo", 0.0) {
            // Move each sample to a radius in [0.9, 1.1].
            let s = 0.9 + 0.2 * (x[0] + 2.0) / 4.0;
            let n = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let y = [s * x[0] / n, s * x[1] / n];
            let p = project(&m, &y, &[0.5], &ProjectionConfig::default()).unwrap();
            let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
            // Newton stops once |I - 0.5| <= 1e-14; the state error is of the same size.
            assert!((p.state[0] - y[0] / r).abs() < 1e-13);
            assert!((p.state[1] - y[1] / r).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(a in -2.0f64..2.0, b in -2.0f64..2.0, s in 0.9f64..1.1) {
            prop_assume!(a * a + b * b > 0.1);
            let m = model("kubo");
            let cfg = ProjectionConfig::default();
            let target = m.eval_invariants(&[a, b]).unwrap();
            let p1 = project(&m, &[a * s, b * s], &target, &cfg).unwrap().state;
            let p2 = project(&m, &p1, &target, &cfg).unwrap().state;
            prop_assert!(inf_norm(&[p2[0] - p1[0], p2[1] - p1[1]]) <= 10.0 * cfg.newton_tol);
        }

        #[test]
        fn lotka_volterra_idempotent(x in 0.5f64..2.0, y in 0.5f64..2.0, z in 0.5f64..2.0, e in -0.02f64..0.02) {
            let m = model("lotka_volterra");
            let cfg = ProjectionConfig::default();
            let target = m.eval_invariants(&[x, y, z]).unwrap();
            prop_assume!(((x - y).abs() + (y - z).abs()) > 0.1);
            if let Ok(p1) = project(&m, &[x + e, y - e, z + 0.5 * e], &target, &cfg) {
                let p2 = project(&m, &p1.state, &target, &cfg).unwrap().state;
                let d: Vec<f64> = p2.iter().zip(&p1.state).map(|(a, b)| a - b).collect();
                prop_assert!(inf_norm(&d) <= 10.0 * cfg.newton_tol);
            }
        }
    }
}
