//! Monte-Carlo error estimators and the run report.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::model::ModelSpec;
use crate::scalar::Scalar;

/// `sqrt(mean_i |d_i|^2)`.
pub fn mean_square_error<T: Scalar>(diffs: &[Vec<T>]) -> Result<T> {
    if diffs.is_empty() {
        return Err(Error::EmptyInput(
            "mean_square_error needs at least one difference",
        ));
    }
    let total: T = diffs
        .iter()
        .map(|d| d.iter().map(|&v| v * v).sum::<T>())
        .sum();
    Ok((total / T::of(diffs.len() as f64)).sqrt())
}

pub(crate) fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    norm2(&a.iter().zip(b).map(|(&x, &y)| x - y).collect::<Vec<_>>())
}

/// Entry `(t, i)` is `|I^i(x_t) - target_i|`.
pub fn invariant_error_series<T: Scalar>(
    model: &ModelSpec<T>,
    trajectory: &[Vec<T>],
    target: &[T],
) -> Result<Vec<Vec<T>>> {
    if trajectory.is_empty() {
        return Err(Error::EmptyInput("trajectory"));
    }
    if target.len() != model.invariant_count() {
        return Err(Error::DimensionMismatch {
            expected: model.invariant_count(),
            got: target.len(),
        });
    }
    trajectory
        .iter()
        .map(|x| {
            Ok(model
                .eval_invariants(x)?
                .iter()
                .zip(target)
                .map(|(&a, &b)| (a - b).abs())
                .collect())
        })
        .collect()
}

/// Pointwise max and mean over paths of per-path series of equal shape.
pub fn aggregate_series<T: Scalar>(per_path: &[Vec<Vec<T>>]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let Some(first) = per_path.first() else {
        return (Vec::new(), Vec::new());
    };
    let count = T::of(per_path.len() as f64);
    let mut max = first.clone();
    let mut sum = first.clone();
    for series in &per_path[1..] {
        for (t, row) in series.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                max[t][i] = max[t][i].max(v);
                sum[t][i] = sum[t][i] + v;
            }
        }
    }
    for row in sum.iter_mut() {
        for v in row.iter_mut() {
            *v = *v / count;
        }
    }
    (max, sum)
}

/// Least-squares slope of `ln(error)` against `ln(h)`.
pub fn strong_order_fit<T: Scalar>(step_sizes: &[T], errors: &[T]) -> Result<T> {
    if step_sizes.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: step_sizes.len(),
            got: errors.len(),
        });
    }
    if step_sizes.len() < 3 {
        return Err(Error::EmptyInput(
            "strong_order_fit needs at least three points",
        ));
    }
    if step_sizes
        .iter()
        .chain(errors)
        .any(|&v| !(v > T::zero()) || !v.is_finite())
    {
        return Err(Error::Degenerate("step sizes and errors must be positive"));
    }
    let xs: Vec<T> = step_sizes.iter().map(|h| h.ln()).collect();
    let ys: Vec<T> = errors.iter().map(|e| e.ln()).collect();
    let n = T::of(xs.len() as f64);
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx <= T::epsilon() * n {
        return Err(Error::Degenerate("all step sizes are equal"));
    }
    let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Configuration echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEcho {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub horizon: f64,
    pub coarse_step: f64,
    pub fine_steps: usize,
    pub coarse: String,
    pub fine: String,
    pub correction_projection: bool,
    pub k_max: usize,
    pub stop_tol: f64,
}

/// Wall-clock seconds per phase, summed over iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WallTimes {
    pub initialize: f64,
    pub reference: f64,
    pub fine_sweep: f64,
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport<T> {
    pub config: RunEcho,
    /// Index `k` holds the RMS error of `X[N]^(k)`, starting at the coarse
    /// initialization (`k = 0`).
    pub per_iteration_mse: Vec<T>,
    /// Largest invariant defect over paths and nodes `n >= 1`, per iteration.
    pub per_iteration_invariant_max: Vec<T>,
    /// Coarse node times `T[n]`, one per row of the series below.
    pub series_times: Vec<T>,
    /// `[time][l]` invariant errors at `series_iteration`, max over paths.
    pub invariant_error_series: Vec<Vec<T>>,
    /// Same, mean over paths.
    pub invariant_error_mean: Vec<Vec<T>>,
    pub series_iteration: usize,
    /// Last iteration performed.
    pub stop_iteration: usize,
    /// Whether the stopping tolerance was met at `stop_iteration`.
    pub converged: bool,
    pub path_count: usize,
    pub wall_times: WallTimes,
}

impl<T: Scalar> ExperimentReport<T> {
    /// Largest invariant defect over all iterations `k >= from`.
    pub fn invariant_max_from(&self, from: usize) -> T {
        self.per_iteration_invariant_max
            .iter()
            .skip(from)
            .fold(T::zero(), |m, &v| m.max(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_params, make_model};
    use proptest::prelude::*;

    #[test]
    fn mse_cases() {
        assert_eq!(
            mean_square_error(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            0.0
        );
        let v = mean_square_error(&[vec![0.3], vec![0.4]]).unwrap();
        assert!((v - 0.125f64.sqrt()).abs() < 1e-16);
        assert!((v - 0.353_553_4).abs() < 1e-7);
        let one = mean_square_error::<f64>(&[vec![3.0, 4.0]]).unwrap();
        assert!((one - 5.0).abs() < 1e-15);
        assert!(mean_square_error::<f64>(&[]).is_err());
    }

    #[test]
    fn invariant_series_cases() {
        let kubo = make_model::<f64>("kubo", &default_params("kubo").unwrap()).unwrap();
        let s = invariant_error_series(&kubo, &[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.5]).unwrap();
        assert_eq!(s, vec![vec![0.0], vec![0.0]]);
        let s = invariant_error_series(&kubo, &[vec![1.1, 0.0]], &[0.5]).unwrap();
        assert!((s[0][0] - 0.105).abs() < 1e-15);
        let lv = make_model::<f64>("lotka_volterra", &default_params("lotka_volterra").unwrap())
            .unwrap();
        let s = invariant_error_series(&lv, &[vec![1.0, 2.0, 1.0]], &[4.0, 2.0]).unwrap();
        assert_eq!(s, vec![vec![0.0, 0.0]]);
        assert!(invariant_error_series(&lv, &[], &[4.0, 2.0]).is_err());
        assert!(invariant_error_series(&lv, &[vec![1.0, 2.0]], &[4.0, 2.0]).is_err());
    }

    #[test]
    fn exact_power_laws() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let e1: Vec<f64> = h.iter().map(|h| 3.0 * h).collect();
        let e5: Vec<f64> = h.iter().map(|h| 0.7 * h.sqrt()).collect();
        assert!((strong_order_fit(&h, &e1).unwrap() - 1.0).abs() < 1e-12);
        assert!((strong_order_fit(&h, &e5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        assert!(matches!(
            strong_order_fit(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(strong_order_fit(&[0.1, 0.05], &[1.0, 2.0]).is_err());
        assert!(strong_order_fit(&[0.1, 0.05, 0.01], &[1.0, 0.0, 3.0]).is_err());
    }

    #[test]
    fn aggregation() {
        let a = vec![vec![1.0, 0.0], vec![2.0, 4.0]];
        let b = vec![vec![3.0, 2.0], vec![0.0, 0.0]];
        let (max, mean) = aggregate_series(&[a, b]);
        assert_eq!(max, vec![vec![3.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(mean, vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
    }

    proptest! {
        #[test]
        fn mse_is_permutation_invariant_and_homogeneous(
            v in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..20),
            s in 0.01f64..100.0,
            rot in 0usize..20,
        ) {
            let base = mean_square_error(&v).unwrap();
            let mut w = v.clone();
            let len = w.len();
            w.rotate_left(rot % len);
            w.reverse();
            prop_assert!((mean_square_error(&w).unwrap() - base).abs() <= 1e-12 * (1.0 + base));
            let scaled: Vec<Vec<f64>> = v.iter().map(|d| d.iter().map(|x| s * x).collect()).collect();
            prop_assert!((mean_square_error(&scaled).unwrap() - s * base).abs() <= 1e-12 * (1.0 + s * base));
        }

        #[test]
        fn slope_ignores_error_scale(
            errs in prop::collection::vec(1e-6f64..1.0, 5),
            c in 1e-3f64..1e3,
        ) {
            let h = [0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625];
            let scaled: Vec<f64> = errs.iter().map(|e| c * e).collect();
            let a = strong_order_fit(&h, &errs).unwrap();
            let b = strong_order_fit(&h, &scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
