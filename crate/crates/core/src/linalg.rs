//! Tiny dense helpers. Problem sizes here are d <= a handful, l <= d.

use crate::scalar::Scalar;

#[inline]
pub(crate) fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

#[inline]
pub(crate) fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `out = a * x` for row-major `a` of shape `rows x x.len()`.
pub(crate) fn matvec<T: Scalar>(a: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * cols..(i + 1) * cols]
            .iter()
            .zip(x)
            .map(|(&aij, &xj)| aij * xj)
            .sum();
    }
}

/// Solves `a * x = b` in place (b becomes x) by Gaussian elimination with
/// partial pivoting. Returns `None` when a pivot vanishes relative to the
/// matrix scale.
pub(crate) fn solve_in_place<T: Scalar>(a: &mut [T], b: &mut [T]) -> Option<()> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = inf_norm(a);
    if scale == T::zero() || !scale.is_finite() {
        return None;
    }
    let tiny = scale * T::epsilon() * T::of(n as f64);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[piv * n + col].abs() <= tiny {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] = a[row * n + k] - factor * a[col * n + k];
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    Some(())
}
