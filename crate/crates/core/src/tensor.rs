//! Dense row-major matrices and the handful of kernels the layers need.
//!
//! A [`Matrix`] doubles as a sequence tensor: one row per frame, one column
//! per feature. Kernels never reorder a reduction, so results are bit-exact
//! across runs and across [`Execution`] modes.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{NormalSampler, SplitMix64};

/// Storage precision of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Scalar types a network can be evaluated in.
pub trait Real:
    Float + Default + Debug + Display + Send + Sync + Sum + std::ops::AddAssign + 'static
{
    const PRECISION: Precision;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` must hold exactly `PRECISION.bytes()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Whether data-parallel loops may fan out over the rayon pool.
///
/// Both modes run the same per-row (or per-sequence) code and reduce in the
/// same order; `Parallel` only changes which thread does the work. Without
/// the `parallel` feature, `Parallel` degrades to `Sequential`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Map `f` over `items`, preserving order.
    pub fn map<I, O, F>(self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Run `f(row_index, row)` for each `width`-sized chunk of `data`.
    pub(crate) fn for_each_row<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                data.par_chunks_mut(width)
                    .enumerate()
                    .for_each(|(i, row)| f(i, row));
            }
            _ => data
                .chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }
}

/// Below this many multiply-adds a matmul stays on the calling thread.
const PAR_MATMUL_MIN_WORK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZipOp {
    Add,
    Mul,
}

/// Row-major dense matrix.
///
/// Zero-row matrices are allowed (an empty look-ahead coefficient bank, for
/// instance); sequence-consuming operations reject them where it matters.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// A `frames x features` matrix.
pub type SequenceTensor<T> = Matrix<T>;

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Build from `f64` values, rounding to `T`.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| T::of(v)).collect())
    }

    /// i.i.d. normal entries drawn in row-major order from
    /// `NormalSampler::new(seed)`.
    pub fn seeded_normal(seed: u64, rows: usize, cols: usize, mean: f64, stddev: f64) -> Result<Self> {
        if !(stddev >= 0.0) || !mean.is_finite() || !stddev.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normal(mean={mean}, stddev={stddev}) needs finite mean and stddev >= 0"
            )));
        }
        Ok(Self::from_rng_normal(&mut NormalSampler::new(seed), rows, cols, mean, stddev))
    }

    pub(crate) fn from_rng_normal(
        sampler: &mut NormalSampler,
        rows: usize,
        cols: usize,
        mean: f64,
        stddev: f64,
    ) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::of(sampler.next(mean, stddev)))
            .collect();
        Self { rows, cols, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn seeded_uniform(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self::from_fn(rows, cols, |_, _| T::of(lo + (hi - lo) * rng.next_f64()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        self.cast()
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix<T>]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::shape("vstack", (rows, cols), m.shape()));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `self * other` with the default [`Execution`].
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_with(other, Execution::default())
    }

    /// `C[i][j] = sum_r A[i][r] * B[r][j]`, accumulated in ascending `r`.
    pub fn matmul_with(&self, other: &Self, exec: Execution) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (k, n) = (self.cols, other.cols);
        let mut out = Self::zeros(self.rows, n);
        let exec = if self.rows * k * n < PAR_MATMUL_MIN_WORK {
            Execution::Sequential
        } else {
            exec
        };
        exec.for_each_row(&mut out.data, n, |i, c| {
            let a = &self.data[i * k..(i + 1) * k];
            for (r, &a_ir) in a.iter().enumerate() {
                let b = &other.data[r * n..(r + 1) * n];
                for (c_j, &b_rj) in c.iter_mut().zip(b) {
                    *c_j += a_ir * b_rj;
                }
            }
        });
        Ok(out)
    }

    /// `self^T * other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("t_matmul", self.shape(), other.shape()));
        }
        let (m, n) = (self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for t in 0..self.rows {
            let a = self.row(t);
            let b = other.row(t);
            for (i, &a_ti) in a.iter().enumerate() {
                let c = &mut out.data[i * n..(i + 1) * n];
                for (c_j, &b_tj) in c.iter_mut().zip(b) {
                    *c_j += a_ti * b_tj;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materialising the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_t", self.shape(), other.shape()));
        }
        let n = other.rows;
        let mut out = Self::zeros(self.rows, n);
        let exec = if self.rows * self.cols * n < PAR_MATMUL_MIN_WORK {
            Execution::Sequential
        } else {
            Execution::default()
        };
        exec.for_each_row(&mut out.data, n, |i, c| {
            let a = self.row(i);
            for (j, c_j) in c.iter_mut().enumerate() {
                *c_j = dot(a, other.row(j));
            }
        });
        Ok(out)
    }

    pub fn zip_map(&self, other: &Self, op: ZipOp) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape("zip_map", self.shape(), other.shape()));
        }
        let f = match op {
            ZipOp::Add => |a: T, b: T| a + b,
            ZipOp::Mul => |a: T, b: T| a * b,
        };
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("axpy", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Add a `1 x cols` bias row to every row.
    pub fn add_row_broadcast(&mut self, bias: &Self) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::shape("add_row_broadcast", self.shape(), bias.shape()));
        }
        for row in self.data.chunks_mut(self.cols.max(1)) {
            for (a, &b) in row.iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Column sums as a `1 x cols` matrix, accumulated top to bottom.
    pub fn sum_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for row in self.data.chunks(self.cols.max(1)) {
            for (a, &b) in out.data.iter_mut().zip(row) {
                *a += b;
            }
        }
        out
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
