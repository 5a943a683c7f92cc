use rand::Rng;

use super::{shape_err, NnError};
use crate::exec::{self, Execution};

/// Work (multiply-adds) below which matrix products stay on one thread.
const PARALLEL_THRESHOLD: usize = 1 << 16;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(shape_err(format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NnError> {
        self.check_same(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same(&self, other: &Matrix) -> Result<(), NnError> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    /// Rows gathered by index.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn hconcat(parts: &[&Matrix]) -> Result<Matrix, NnError> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(shape_err("hconcat row counts differ"));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    fn exec_for(work: usize) -> Execution {
        if work >= PARALLEL_THRESHOLD {
            Execution::default()
        } else {
            Execution::Sequential
        }
    }

    /// `self * other^T`: `(n x k) * (m x k)^T -> n x m`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix, NnError> {
        if self.cols != other.cols {
            return Err(shape_err(format!("{:?} * {:?}^T", self.shape(), other.shape())));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        let exec = Self::exec_for(self.rows * other.rows * self.cols);
        let m = other.rows;
        exec::for_each_chunk_mut(exec, &mut out.data, m.max(1), |r, row| {
            let a = self.row(r);
            for (o, cell) in row.iter_mut().enumerate() {
                *cell = dot(a, other.row(o));
            }
        });
        Ok(out)
    }

    /// `self * other`: `(n x k) * (k x m) -> n x m`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NnError> {
        if self.cols != other.rows {
            return Err(shape_err(format!("{:?} * {:?}", self.shape(), other.shape())));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let exec = Self::exec_for(self.rows * other.cols * self.cols);
        exec::for_each_chunk_mut(exec, &mut out.data, other.cols.max(1), |r, row| {
            let a = self.row(r);
            for (k, &ak) in a.iter().enumerate() {
                let b = other.row(k);
                for (c, cell) in row.iter_mut().enumerate() {
                    *cell += ak * b[c];
                }
            }
        });
        Ok(out)
    }

    /// `self^T * other`: `(k x n)^T * (k x m) -> n x m`.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix, NnError> {
        if self.rows != other.rows {
            return Err(shape_err(format!("{:?}^T * {:?}", self.shape(), other.shape())));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let exec = Self::exec_for(self.rows * self.cols * other.cols);
        exec::for_each_chunk_mut(exec, &mut out.data, other.cols.max(1), |r, row| {
            for k in 0..self.rows {
                let a = self.data[k * self.cols + r];
                let b = other.row(k);
                for (c, cell) in row.iter_mut().enumerate() {
                    *cell += a * b[c];
                }
            }
        });
        Ok(out)
    }

    /// Sum over rows, one value per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// Dot product over four interleaved lanes, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ta.iter().zip(tb) {
        acc += x * y;
    }
    acc
}
