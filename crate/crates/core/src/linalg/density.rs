use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::eigen::hermitian_eigenvalues;
use super::matrix::{ComplexMatrix, MAX_SIDE};
use crate::error::{QrcError, Result};

/// Relative Hermiticity tolerance accepted by [`DensityMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute trace tolerance accepted by [`DensityMatrix::new`].
pub const TRACE_TOL: f64 = 1e-12;
/// Lowest eigenvalue tolerated by [`DensityMatrix::check_psd`].
pub const PSD_TOL: f64 = 1e-10;

/// Hermitian, unit-trace, positive semidefinite matrix.
///
/// Hermiticity and trace are validated on construction. Positivity costs a
/// full diagonalization and is only checked through [`DensityMatrix::check_psd`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(QrcError::Shape(format!(
                "density matrix must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if matrix.rows() == 0 {
            return Err(QrcError::Validation("density matrix must be non-empty".into()));
        }
        if !matrix.is_finite() {
            return Err(QrcError::Validation("density matrix has non-finite entries".into()));
        }
        let norm = matrix.frobenius_norm();
        let defect = matrix.hermiticity_defect();
        if defect > HERMITIAN_TOL * norm {
            return Err(QrcError::Validation(format!(
                "matrix is not Hermitian: ||A - A^H||_F = {defect:e}"
            )));
        }
        let tr = matrix.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(QrcError::Validation(format!("trace is {tr}, expected 1")));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix produced by a trace-preserving operation on valid states.
    pub(crate) fn new_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    /// `|ψ⟩⟨ψ|` for a normalized amplitude vector.
    pub fn from_pure(amplitudes: &[C64]) -> Result<Self> {
        let n = amplitudes.len();
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if n == 0 || (norm - 1.0).abs() > TRACE_TOL {
            return Err(QrcError::Validation(format!(
                "pure state must be a normalized non-empty vector (norm² = {norm})"
            )));
        }
        Ok(Self {
            matrix: ComplexMatrix::from_fn(n, n, |i, j| amplitudes[i] * amplitudes[j].conj()),
        })
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(QrcError::Validation("dimension must be at least 1".into()));
        }
        Ok(Self {
            matrix: ComplexMatrix::from_real_diagonal(&vec![1.0 / dim as f64; dim]),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn trace_error(&self) -> f64 {
        (self.matrix.trace() - C64::new(1.0, 0.0)).norm()
    }

    /// `‖ρ − ρ†‖_F / ‖ρ‖_F`.
    pub fn relative_hermiticity_defect(&self) -> f64 {
        self.matrix.hermiticity_defect() / self.matrix.frobenius_norm()
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ.
        let n = self.dim();
        (0..n)
            .map(|j| self.matrix.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let ev = hermitian_eigenvalues(&self.matrix)?;
        Ok(ev.first().copied().unwrap_or(0.0))
    }

    /// On-demand positivity diagnostic.
    pub fn check_psd(&self) -> Result<()> {
        let min = self.min_eigenvalue()?;
        if min < -PSD_TOL {
            return Err(QrcError::Validation(format!(
                "density matrix has eigenvalue {min:e} below -{PSD_TOL:e}"
            )));
        }
        Ok(())
    }
}

/// Kronecker product `a ⊗ b`; the left factor indexes the most significant
/// part of the combined index.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let rows = a
        .rows()
        .checked_mul(b.rows())
        .filter(|&r| r <= MAX_SIDE)
        .ok_or_else(|| QrcError::Size(format!("{} x {} rows exceeds {MAX_SIDE}", a.rows(), b.rows())))?;
    let cols = a
        .cols()
        .checked_mul(b.cols())
        .filter(|&c| c <= MAX_SIDE)
        .ok_or_else(|| QrcError::Size(format!("{} x {} cols exceeds {MAX_SIDE}", a.cols(), b.cols())))?;
    if !a.is_finite() || !b.is_finite() {
        return Err(QrcError::Validation("kron operands must be finite".into()));
    }
    let (br, bc) = (b.rows(), b.cols());
    Ok(ComplexMatrix::from_fn(rows, cols, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    }))
}

/// Traces out the leading factor of dimension `sub_dim`.
pub fn partial_trace_first_matrix(m: &ComplexMatrix, sub_dim: usize) -> Result<ComplexMatrix> {
    if !m.is_square() {
        return Err(QrcError::Shape("partial trace needs a square matrix".into()));
    }
    if sub_dim == 0 || !m.rows().is_multiple_of(sub_dim) {
        return Err(QrcError::Shape(format!(
            "dimension {} is not divisible by {sub_dim}",
            m.rows()
        )));
    }
    let rest = m.rows() / sub_dim;
    let mut out = Mat::<C64>::zeros(rest, rest);
    let src = m.as_faer();
    for a in 0..sub_dim {
        let block = src.submatrix(a * rest, a * rest, rest, rest);
        out += block;
    }
    Ok(ComplexMatrix::from_faer(out))
}

pub fn partial_trace_first(rho: &DensityMatrix, sub_dim: usize) -> Result<DensityMatrix> {
    partial_trace_first_matrix(rho.matrix(), sub_dim).map(DensityMatrix::new_unchecked)
}

/// `‖a − b‖_F`.
pub fn frobenius_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(QrcError::Shape(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut acc = 0.0;
    for j in 0..a.cols() {
        for (x, y) in a.column(j).iter().zip(b.column(j)) {
            acc += (x - y).norm_sqr();
        }
    }
    Ok(acc.sqrt())
}

/// Full-rank random state `G G† / Tr(G G†)` with `G` drawn from the complex
/// Ginibre ensemble.
pub fn random_density_matrix<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DensityMatrix> {
    if dim == 0 {
        return Err(QrcError::Validation("dimension must be at least 1".into()));
    }
    if dim > MAX_SIDE {
        return Err(QrcError::Size(format!("dimension {dim} exceeds {MAX_SIDE}")));
    }
    // Row-major fill so the stream maps to entries independently of storage.
    let mut g = Mat::<C64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            g[(i, j)] = C64::new(re, im);
        }
    }
    let mut ggh = Mat::<C64>::zeros(dim, dim);
    matmul(
        ggh.as_mut(),
        Accum::Replace,
        g.as_ref(),
        g.adjoint(),
        C64::new(1.0, 0.0),
        Par::Seq,
    );
    let mut m = ComplexMatrix::from_faer(ggh);
    m.hermitize();
    let tr = m.trace().re;
    let m = m.scale(C64::new(1.0 / tr, 0.0));
    Ok(DensityMatrix::new_unchecked(m))
}
