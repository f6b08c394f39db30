//! Minimal dense linear algebra on column-major `f64` storage.
//!
//! Every matrix in this crate has columns that mean something on their own
//! (dictionary atoms, samples, codes), so storage is column-major and most
//! kernels walk one contiguous column at a time.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Matrix::zeros(size, size);
        for i in 0..size {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data length",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices, the natural way to write literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: c,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for col in columns {
            if col.len() != rows {
                return Err(Error::DimensionMismatch {
                    what: "column length",
                    expected: rows,
                    found: col.len(),
                });
            }
            data.extend_from_slice(col);
        }
        Ok(Matrix {
            rows,
            cols: columns.len(),
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major backing slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · v`. Zero entries of `v` are skipped, which matters for sparse codes.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                axpy(vj, self.col(j), out);
            }
        }
    }

    /// `selfᵀ · u`.
    pub fn tr_mul_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_mul_vec_into(u, &mut out);
        out
    }

    pub fn tr_mul_vec_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.col(j), u);
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matmul inner dimension",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let (src, dst) = (other.col(j), j * self.rows);
            self.mul_vec_into(src, &mut out.data[dst..dst + self.rows]);
        }
        Ok(out)
    }

    /// `selfᵀ · self`, exploiting symmetry.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = dot(self.col(i), self.col(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `self += alpha · a bᵀ`; zero entries of `b` are skipped.
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (j, &bj) in b.iter().enumerate() {
            if bj != 0.0 {
                axpy(alpha * bj, a, self.col_mut(j));
            }
        }
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.frobenius_sq())
    }

    /// Copies the selected columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for &j in indices {
            data.extend_from_slice(self.col(j));
        }
        Matrix {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize without -ffast-math
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
