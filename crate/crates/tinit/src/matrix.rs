//! Dense row-major matrices with deterministic multiplication.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{RngSpec, SampleStream};
use crate::scalar::Scalar;

/// Minimum row count before matmul shards rows across workers.
const PAR_ROW_THRESHOLD: usize = 64;

/// Dense matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major data; every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix construction",
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rounds every entry to the target precision.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Largest absolute entry, as binary64.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.to_f64().abs()))
    }

    /// Largest absolute entrywise difference, as binary64.
    pub fn max_abs_diff(&self, other: &Matrix<T>) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "max_abs_diff",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |acc, (a, b)| {
                acc.max((a.to_f64() - b.to_f64()).abs())
            }))
    }

    /// Matrix product with a fixed summation order: each output entry
    /// accumulates over the inner index in ascending order, so results are
    /// bit-identical however many workers the row partition uses.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        if out.data.is_empty() {
            return Ok(out);
        }
        let mul_row = |(i, out_row): (usize, &mut [T])| {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        };
        if self.rows >= PAR_ROW_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(mul_row);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(mul_row);
        }
        Ok(out)
    }

    /// Entries drawn i.i.d. from the spec's distribution in row-major order.
    pub fn sample(rows: usize, cols: usize, rng: &RngSpec) -> Self {
        assert!(rows >= 1 && cols >= 1, "sample needs rows, cols >= 1");
        let mut stream = SampleStream::new(rng.seed);
        let data = (0..rows * cols)
            .map(|_| stream.next_from(rng.distribution))
            .collect();
        Matrix { rows, cols, data }
    }
}

/// Sample statistics of matrix columns: squared lengths and distinct-pair
/// inner products, each with mean and unbiased sample variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub sq_length_mean: f64,
    pub sq_length_var: f64,
    pub inner_mean: f64,
    pub inner_var: f64,
}

/// Column statistics used to check near-orthogonality of Gaussian matrices;
/// accumulation runs in binary64 regardless of element precision.
pub fn column_stats<T: Scalar>(a: &Matrix<T>) -> Result<ColumnStats> {
    if a.cols() < 2 {
        return Err(Error::InvalidArgument {
            context: format!("column_stats needs at least 2 columns, got {}", a.cols()),
        });
    }
    let (m, n) = (a.rows(), a.cols());
    // Gram of columns: G[i][j] = <col_i, col_j> accumulated over rows.
    let mut gram = vec![0.0_f64; n * n];
    for r in 0..m {
        let row = a.row(r);
        for i in 0..n {
            let xi = row[i].to_f64();
            for j in i..n {
                gram[i * n + j] += xi * row[j].to_f64();
            }
        }
    }
    let sq_lengths: Vec<f64> = (0..n).map(|i| gram[i * n + i]).collect();
    let mut inners = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            inners.push(gram[i * n + j]);
        }
    }
    let (sq_length_mean, sq_length_var) = mean_and_sample_var(&sq_lengths);
    let (inner_mean, inner_var) = mean_and_sample_var(&inners);
    Ok(ColumnStats {
        sq_length_mean,
        sq_length_var,
        inner_mean,
        inner_var,
    })
}

fn mean_and_sample_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}
