use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use num_complex::Complex64 as C64;

use crate::error::{QrcError, Result};

/// Largest admissible number of rows or columns of any matrix produced here.
pub const MAX_SIDE: usize = 1 << 20;

/// Dense complex matrix.
///
/// Entries are addressed as `(row, col)`; constructors taking flat data expect
/// row-major order. Storage is a column-major `faer` matrix so that products go
/// through the blocked kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    inner: Mat<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            inner: Mat::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Mat::identity(n, n),
        }
    }

    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(entries.len()) {
            return Err(QrcError::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows.saturating_mul(cols),
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(QrcError::Validation(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self {
            inner: Mat::from_fn(rows, cols, |i, j| entries[i * cols + j]),
        })
    }

    pub fn from_real_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        Self::from_row_major(rows, cols, entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self {
            inner: Mat::from_fn(rows, cols, f),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.inner[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.inner[(i, i)] = d;
        }
        m
    }

    pub(crate) fn from_faer(inner: Mat<C64>) -> Self {
        Self { inner }
    }

    pub fn as_faer(&self) -> MatRef<'_, C64> {
        self.inner.as_ref()
    }

    pub fn as_faer_mut(&mut self) -> MatMut<'_, C64> {
        self.inner.as_mut()
    }

    pub fn into_faer(self) -> Mat<C64> {
        self.inner
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.inner[(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.inner[(row, col)] = value;
    }

    pub fn to_row_major(&self) -> Vec<C64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self {
            inner: self.inner.adjoint().to_owned(),
        }
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(QrcError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        let mut out = Mat::zeros(self.rows(), rhs.cols());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.as_ref(),
            rhs.inner.as_ref(),
            C64::new(1.0, 0.0),
            Par::Seq,
        );
        Ok(Self { inner: out })
    }

    /// `self · other · self†`.
    pub fn conjugate_by(&self, other: &ComplexMatrix) -> Result<Self> {
        if !other.is_square() || other.rows() != self.cols() {
            return Err(QrcError::Shape(format!(
                "cannot conjugate {}x{} by {}x{}",
                other.rows(),
                other.cols(),
                self.rows(),
                self.cols()
            )));
        }
        let left = self.matmul(other)?;
        let mut out = Mat::zeros(left.rows(), self.rows());
        matmul(
            out.as_mut(),
            Accum::Replace,
            left.inner.as_ref(),
            self.inner.adjoint(),
            C64::new(1.0, 0.0),
            Par::Seq,
        );
        Ok(Self { inner: out })
    }

    fn check_same_shape(&self, other: &ComplexMatrix) -> Result<()> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(QrcError::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            inner: &self.inner + &other.inner,
        })
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            inner: &self.inner - &other.inner,
        })
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self.inner[(i, j)] * factor)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows().min(self.cols())).map(|i| self.inner[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm_l2()
    }

    /// `‖A − A†‖_F`, infinite for non-square input.
    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                acc += (self.inner[(i, j)] - self.inner[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Replaces the matrix by `(A + A†) / 2`. Square input only.
    pub fn hermitize(&mut self) {
        let n = self.rows();
        debug_assert!(self.is_square());
        for j in 0..n {
            let d = self.inner[(j, j)];
            self.inner[(j, j)] = C64::new(d.re, 0.0);
            for i in (j + 1)..n {
                let avg = (self.inner[(i, j)] + self.inner[(j, i)].conj()) * 0.5;
                self.inner[(i, j)] = avg;
                self.inner[(j, i)] = avg.conj();
            }
        }
    }

    pub fn max_abs_imag(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for z in self.inner.col_as_slice(j) {
                m = m.max(z.im.abs());
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for (a, b) in self.inner.col_as_slice(j).iter().zip(other.inner.col_as_slice(j)) {
                m = m.max((a - b).norm());
            }
        }
        Ok(m)
    }

    pub fn is_finite(&self) -> bool {
        (0..self.cols()).all(|j| {
            self.inner
                .col_as_slice(j)
                .iter()
                .all(|z| z.re.is_finite() && z.im.is_finite())
        })
    }

    pub fn column(&self, j: usize) -> &[C64] {
        self.inner.col_as_slice(j)
    }
}
