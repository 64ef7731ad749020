//! Small dense linear algebra: a row-major matrix, Cholesky factorization and
//! triangular solves. Sized for the few-hundred-point problems handled here.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix.
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer length mismatch");
        Matrix { rows, cols, data }
    }

    /// Stacks column vectors side by side.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Dimension("columns of unequal length".into()));
        }
        Ok(Matrix::from_fn(rows, cols, |i, j| columns[j][i]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(alloc::format!(
                "matmul {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ * v`.
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `selfᵀ * self`.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..self.cols {
                    out[(a, b)] += ra * r[b];
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                out[(a, b)] = out[(b, a)];
            }
        }
        out
    }

    pub fn add_to_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..i {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
    /// Diagonal jitter that was added before the factorization succeeded.
    jitter: f64,
}

impl Cholesky {
    /// Plain factorization. Fails on the first non-positive pivot.
    pub fn factor(a: &Matrix) -> Result<Self> {
        Self::factor_with_tolerance(a, 0.0)
    }

    /// Factorization that treats pivots below `rel_tol * max(diag)` as zero.
    /// Used to detect rank-deficient normal equations.
    pub fn factor_with_tolerance(a: &Matrix, rel_tol: f64) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::Dimension("cholesky of non-square matrix".into()));
        }
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let floor = rel_tol * max_diag;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    if !(s > floor) || !s.is_finite() {
                        return Err(Error::Singular(alloc::format!(
                            "non-positive pivot {s:e} at index {i}"
                        )));
                    }
                    l[(i, i)] = libm::sqrt(s);
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Cholesky {
            lower: l,
            jitter: 0.0,
        })
    }

    /// Factorization with one retry: on failure add `1e-8 * scale` to the
    /// diagonal and try again, then give up.
    pub fn factor_stabilized(a: &Matrix, scale: f64) -> Result<Self> {
        match Self::factor(a) {
            Ok(c) => Ok(c),
            Err(_) => {
                let jitter = 1e-8 * scale;
                let mut b = a.clone();
                b.add_to_diagonal(jitter);
                Self::factor(&b)
                    .map(|mut c| {
                        c.jitter = jitter;
                        c
                    })
                    .map_err(|e| {
                        Error::Factorization(alloc::format!("{e}; jitter {jitter:e} did not help"))
                    })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.lower.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            b[i] /= self.lower[(i, i)];
            let bi = b[i];
            let row = self.lower.row(i);
            for (bk, &lik) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lik * bi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L⁻¹ B` column by column.
    pub fn whiten_columns(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let mut col = b.column(j);
            self.solve_lower_in_place(&mut col);
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// `A⁻¹` (dense).
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let x = self.solve(&e);
            for (i, v) in x.into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        inv
    }

    /// `tr(A⁻¹) = ‖L⁻¹‖²_F`.
    pub fn inverse_trace(&self) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        let mut col = vec![0.0; n];
        for j in 0..n {
            // L⁻¹ e_j is zero above row j.
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            for i in j..n {
                let row = self.lower.row(i);
                let s = col[i] - dot(&row[j..i], &col[j..i]);
                col[i] = s / row[i];
            }
            total += col[j..].iter().map(|v| v * v).sum::<f64>();
        }
        total
    }

    /// `L z`, the map that turns iid standard normals into a draw with
    /// covariance `A`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| dot(&self.lower.row(i)[..=i], &z[..=i]))
            .collect()
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim())
            .map(|i| 2.0 * libm::log(self.lower[(i, i)]))
            .sum()
    }
}

/// Solves a general square system with partial pivoting. Returns an error
/// when the matrix is numerically singular.
pub fn solve_general(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Dimension("solve_general shape".into()));
    }
    let m = b.cols();
    let mut aug = Matrix::zeros(n, n + m);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)];
        }
        for j in 0..m {
            aug[(i, n + j)] = b[(i, j)];
        }
    }
    let scale = a.as_slice().iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, aug[(i, k)].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(pmax > 1e-14 * scale) {
            return Err(Error::SingularDesign(alloc::format!(
                "pivot {pmax:e} at column {k}"
            )));
        }
        if piv != k {
            for j in 0..n + m {
                let t = aug[(k, j)];
                aug[(k, j)] = aug[(piv, j)];
                aug[(piv, j)] = t;
            }
        }
        let d = aug[(k, k)];
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = aug[(i, k)] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n + m {
                aug[(i, j)] -= f * aug[(k, j)];
            }
        }
    }
    Ok(Matrix::from_fn(n, m, |i, j| aug[(i, n + j)] / aug[(i, i)]))
}

pub fn inverse_general(a: &Matrix) -> Result<Matrix> {
    solve_general(a, &Matrix::identity(a.rows()))
}
