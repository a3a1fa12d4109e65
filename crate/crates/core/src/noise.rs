//! Wiener increments for one sample path on the finest grid.
//!
//! A path is split into `N` coarse intervals of `J` fine steps each. The
//! coarse propagator sees the sum of the `J` fine increments of its
//! interval, so coarse and fine solvers are driven by the same Brownian path.
//!
//! Draws come from a ChaCha8 stream selected by `(seed, path_index)`. Each
//! increment `(n, j, r)` owns a fixed position in that stream (two 64-bit
//! words, Box-Muller), so any interval can be generated independently and
//! the result never depends on generation order or thread count.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid<T> {
    seed: u64,
    path_index: u64,
    coarse_count: usize,
    fine_per_coarse: usize,
    noise_count: usize,
    dt_fine: T,
    /// Row-major `[n][j][r]`.
    increments: Vec<T>,
}

const TWO_POW_53: f64 = (1u64 << 53) as f64;

/// Standard normal from two words: `u1` in (0, 1], `u2` in [0, 1).
#[inline]
fn box_muller(a: u64, b: u64) -> f64 {
    let u1 = ((a >> 11) + 1) as f64 / TWO_POW_53;
    let u2 = (b >> 11) as f64 / TWO_POW_53;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl<T: Scalar> NoiseGrid<T> {
    /// Draws the increments of path `path_index`, each `~ Normal(0, dt_fine)`.
    pub fn generate(
        seed: u64,
        path_index: u64,
        coarse_count: usize,
        fine_per_coarse: usize,
        noise_count: usize,
        dt_fine: T,
    ) -> Result<Self> {
        Self::check_shape(coarse_count, fine_per_coarse, noise_count)?;
        if !(dt_fine > T::zero()) || !dt_fine.is_finite() {
            return Err(Error::InvalidConfig("dt_fine must be positive".into()));
        }
        let per_interval = fine_per_coarse * noise_count;
        let sd = dt_fine.as_f64().sqrt();
        let mut increments = vec![T::zero(); coarse_count * per_interval];
        increments
            .par_chunks_mut(per_interval)
            .enumerate()
            .for_each(|(n, chunk)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path_index);
                // u64 draws are two 32-bit words each.
                rng.set_word_pos(4 * (n * per_interval) as u128);
                for slot in chunk.iter_mut() {
                    let a = rng.next_u64();
                    let b = rng.next_u64();
                    *slot = T::of(sd * box_muller(a, b));
                }
            });
        Ok(Self {
            seed,
            path_index,
            coarse_count,
            fine_per_coarse,
            noise_count,
            dt_fine,
            increments,
        })
    }

    /// Wraps explicit increments laid out `[n][j][r]`.
    pub fn from_increments(
        coarse_count: usize,
        fine_per_coarse: usize,
        noise_count: usize,
        dt_fine: T,
        increments: Vec<T>,
    ) -> Result<Self> {
        Self::check_shape(coarse_count, fine_per_coarse, noise_count)?;
        let expected = coarse_count * fine_per_coarse * noise_count;
        if increments.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: increments.len(),
            });
        }
        Ok(Self {
            seed: 0,
            path_index: 0,
            coarse_count,
            fine_per_coarse,
            noise_count,
            dt_fine,
            increments,
        })
    }

    fn check_shape(n: usize, j: usize, m: usize) -> Result<()> {
        if n == 0 || j == 0 || m == 0 {
            Err(Error::InvalidConfig(format!(
                "grid sizes must be positive (N={n}, J={j}, m={m})"
            )))
        } else {
            Ok(())
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn path_index(&self) -> u64 {
        self.path_index
    }
    pub fn coarse_count(&self) -> usize {
        self.coarse_count
    }
    pub fn fine_per_coarse(&self) -> usize {
        self.fine_per_coarse
    }
    pub fn noise_count(&self) -> usize {
        self.noise_count
    }
    pub fn dt_fine(&self) -> T {
        self.dt_fine
    }
    pub fn increments(&self) -> &[T] {
        &self.increments
    }

    /// The `m` channel increments of fine step `j` in interval `n`.
    #[inline]
    pub fn fine_increment(&self, n: usize, j: usize) -> &[T] {
        let m = self.noise_count;
        let start = (n * self.fine_per_coarse + j) * m;
        &self.increments[start..start + m]
    }

    /// Sum of the fine increments of interval `n`, channel `r` (zero-based),
    /// accumulated left to right.
    pub fn coarse_increment(&self, n: usize, r: usize) -> Result<T> {
        if n >= self.coarse_count || r >= self.noise_count {
            return Err(Error::IndexOutOfRange(format!(
                "coarse increment ({n}, {r}) of grid {}x{}",
                self.coarse_count, self.noise_count
            )));
        }
        Ok((0..self.fine_per_coarse).fold(T::zero(), |acc, j| acc + self.fine_increment(n, j)[r]))
    }

    /// All channels of [`coarse_increment`](Self::coarse_increment) for interval `n`.
    pub fn coarse_increments(&self, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.noise_count];
        for j in 0..self.fine_per_coarse {
            for (o, &w) in out.iter_mut().zip(self.fine_increment(n, j)) {
                *o = *o + w;
            }
        }
        out
    }

    /// Increments of the whole path re-binned into `steps` equal steps,
    /// each the left-to-right sum of consecutive fine increments.
    pub fn resampled(&self, steps: usize) -> Result<Vec<Vec<T>>> {
        let total = self.coarse_count * self.fine_per_coarse;
        if steps == 0 || !total.is_multiple_of(steps) {
            return Err(Error::InvalidConfig(format!(
                "{steps} steps do not divide the {total} fine steps of the grid"
            )));
        }
        let block = total / steps;
        let m = self.noise_count;
        Ok(self
            .increments
            .chunks(block * m)
            .map(|chunk| {
                let mut acc = vec![T::zero(); m];
                for step in chunk.chunks(m) {
                    for (a, &w) in acc.iter_mut().zip(step) {
                        *a = *a + w;
                    }
                }
                acc
            })
            .collect())
    }

    /// Dumps the grid: a header of six little-endian 64-bit values
    /// (seed, path_index, N, J, m as integers, dt_fine as f64) followed by
    /// the increments as little-endian f64 in `[n][j][r]` order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [
            self.seed,
            self.path_index,
            self.coarse_count as u64,
            self.fine_per_coarse as u64,
            self.noise_count as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.dt_fine.as_f64().to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let seed = u64::from_le_bytes(next(&mut r)?);
        let path_index = u64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let j = u64::from_le_bytes(next(&mut r)?) as usize;
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        Self::check_shape(n, j, m)?;
        let count = n
            .checked_mul(j)
            .and_then(|v| v.checked_mul(m))
            .ok_or_else(|| Error::InvalidConfig("grid header overflows".into()))?;
        let mut increments = Vec::with_capacity(count);
        for _ in 0..count {
            increments.push(T::of(f64::from_le_bytes(next(&mut r)?)));
        }
        Ok(Self {
            seed,
            path_index,
            coarse_count: n,
            fine_per_coarse: j,
            noise_count: m,
            dt_fine: T::of(dt),
            increments,
        })
    }
}

/// Clamps `dw` to `[-A, A]` with `A = sqrt(2 k dt |ln dt|)`.
pub fn truncated_increment<T: Scalar>(dw: T, dt: T, k_trunc: T) -> T {
    if dt <= T::zero() {
        return T::zero();
    }
    let bound = (T::of(2.0) * k_trunc * dt * dt.ln().abs()).sqrt();
    dw.max(-bound).min(bound)
}
