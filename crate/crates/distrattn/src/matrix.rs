//! Dense row-major matrices over `f32` plus the seeded generator every
//! experiment in this crate draws from.
//!
//! The generator is counter-based (SplitMix64 over a seed-offset counter), so
//! the i-th draw depends only on `(seed, i)`. Identical seeds produce
//! identical streams on every platform, which is what makes the error tables
//! and benchmark workloads reproducible.

use crate::{Error, Result};

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based deterministic generator (SplitMix64).
///
/// Output `i` is `mix(seed + (i + 1) * gamma)`; the counter is the only
/// mutable state.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Derives an independent stream, used to give every trial or worker its
    /// own substream without coupling draw counts.
    pub fn substream(seed: u64, stream: u64) -> Self {
        Rng::new(mix(seed ^ mix(stream.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(SPLITMIX_GAMMA)))
    }

    /// Uniform draw on the open interval (0, 1).
    ///
    /// Uses 23 high bits plus a half-step offset, so the result is at least
    /// 2^-24 and at most 1 - 2^-24; both endpoints are unreachable.
    pub fn next_open01(&mut self) -> f32 {
        let v = (self.next_u64() >> 41) as f32;
        (v + 0.5) * (1.0 / 8_388_608.0)
    }

    /// Standard normal draw via Box-Muller (two uniforms per draw, cosine
    /// branch only, computed in f64).
    pub fn next_standard_normal(&mut self) -> f32 {
        let u1 = ((self.next_u64() >> 11) as f64 + 0.5) / 9_007_199_254_740_992.0;
        let u2 = ((self.next_u64() >> 11) as f64 + 0.5) / 9_007_199_254_740_992.0;
        ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dense row-major matrix of `f32`; the carrier for Q, K, V, S, and O.
///
/// Immutable once built (all operations return new matrices), so instances
/// are safe to share read-only across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Elements i.i.d. uniform on (0, 1), drawn in row-major order.
    pub fn random_uniform(rng: &mut Rng, rows: usize, cols: usize) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for x in &mut m.data {
            *x = rng.next_open01();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of rows `[start, start + count)` as a new matrix.
    pub fn row_block(&self, start: usize, count: usize) -> Matrix {
        assert!(start + count <= self.rows);
        Matrix::from_vec(
            count,
            self.cols,
            self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        )
    }

    /// Standard product with a fixed summation order (ascending inner index),
    /// so results are bitwise deterministic.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Row-wise softmax, stabilized by subtracting the row max.
    ///
    /// Entries equal to -inf contribute zero probability; a row that is all
    /// -inf has no defined softmax and is rejected.
    pub fn softmax_rows(&self) -> Result<Matrix> {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "softmax_rows: row {i} is entirely -inf"
                )));
            }
            let mut sum = 0.0f32;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        Ok(out)
    }
}
