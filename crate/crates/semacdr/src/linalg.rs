//! Dense row-major matrices and a small CSR sparse matrix, generic over [`Scalar`].
//!
//! Everything here is plain loops over `Vec<T>`; catalogs and hidden sizes in
//! this crate are small enough that cache-oblivious tricks would be noise.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dense row-major matrix. Vectors are 1×n or n×1 matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
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

    /// 1×1 matrix holding a single scalar.
    pub fn scalar(x: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        out
    }

    /// `self (m×k) · otherᵀ (n×k)ᵀ`.
    pub fn matmul_transpose_b(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_transpose_b shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut s = T::zero();
                for p in 0..k {
                    s += arow[p] * brow[p];
                }
                out.data[i * n + j] = s;
            }
        }
        out
    }

    /// `selfᵀ (k×m)ᵀ · other (k×n)`.
    pub fn transpose_a_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "transpose_a_matmul shape mismatch");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = arow[i];
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_in_place(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_in_place(&mut self, c: T) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Convert entries through `f64` (exact for f32→f64 and f64→f64).
    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x.as_f64()).collect() }
    }

    pub fn from_f64(m: &Matrix<f64>) -> Self {
        Self { rows: m.rows, cols: m.cols, data: m.data.iter().map(|&x| T::of(x)).collect() }
    }
}

/// Compressed sparse row matrix with constant (non-differentiable) entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Build from (row, col, value) triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(u32, u32, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indices: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut row_counts = vec![0usize; rows];
        let mut prev: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            debug_assert!((r as usize) < rows && (c as usize) < cols);
            if prev == Some((r, c)) {
                let last = values.len() - 1;
                values[last] += v;
            } else {
                indices.push(c);
                values.push(v);
                row_counts[r as usize] += 1;
                prev = Some((r, c));
            }
        }
        let mut indptr = vec![0usize; rows + 1];
        for r in 0..rows {
            indptr[r + 1] = indptr[r] + row_counts[r];
        }
        Self { rows, cols, indptr, indices, values }
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[k], r as u32, self.values[k]));
            }
        }
        Self::from_triplets(self.cols, self.rows, triplets)
    }

    /// `self (r×c) · dense (c×n)`.
    pub fn matmul_dense(&self, dense: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, dense.rows, "spmm shape mismatch");
        let n = dense.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for r in 0..self.rows {
            let orow = &mut out.data[r * n..(r + 1) * n];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k] as usize;
                let v = self.values[k];
                let drow = &dense.data[c * n..(c + 1) * n];
                for j in 0..n {
                    orow[j] += v * drow[j];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.data[r * self.cols + self.indices[k] as usize] += self.values[k];
            }
        }
        out
    }
}
