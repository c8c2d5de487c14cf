use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};
use num_complex::Complex64 as C64;

use super::matrix::ComplexMatrix;
use crate::error::{QrcError, Result};

/// Relative Hermiticity tolerance accepted by the eigensolver.
pub const EIG_HERMITIAN_TOL: f64 = 1e-10;

/// Spectral decomposition `H = V Λ V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: ComplexMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V Λ V†`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let scaled = scale_columns(&self.eigenvectors, |j| C64::new(self.eigenvalues[j], 0.0));
        mul_adjoint(&scaled, &self.eigenvectors)
    }

    /// `‖H V − V Λ‖_F`.
    pub fn residual(&self, h: &ComplexMatrix) -> Result<f64> {
        let hv = h.matmul(&self.eigenvectors)?;
        let vl = scale_columns(&self.eigenvectors, |j| C64::new(self.eigenvalues[j], 0.0));
        Ok(hv.sub(&vl)?.frobenius_norm())
    }

    /// Largest entrywise deviation of `V† V` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let v = &self.eigenvectors;
        let mut g = Mat::<C64>::zeros(v.cols(), v.cols());
        matmul(
            g.as_mut(),
            Accum::Replace,
            v.as_faer().adjoint(),
            v.as_faer(),
            C64::new(1.0, 0.0),
            Par::Seq,
        );
        let gram = ComplexMatrix::from_faer(g);
        gram.max_abs_diff(&ComplexMatrix::identity(v.cols())).unwrap_or(f64::INFINITY)
    }
}

fn scale_columns(v: &ComplexMatrix, factor: impl Fn(usize) -> C64) -> ComplexMatrix {
    ComplexMatrix::from_fn(v.rows(), v.cols(), |i, j| v.get(i, j) * factor(j))
}

/// `a · b†`.
fn mul_adjoint(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = Mat::<C64>::zeros(a.rows(), b.rows());
    matmul(
        out.as_mut(),
        Accum::Replace,
        a.as_faer(),
        b.as_faer().adjoint(),
        C64::new(1.0, 0.0),
        Par::Seq,
    );
    ComplexMatrix::from_faer(out)
}

/// Validates Hermiticity and returns the symmetrized copy.
fn symmetrized(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !h.is_square() {
        return Err(QrcError::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    if !h.is_finite() {
        return Err(QrcError::Validation("matrix has non-finite entries".into()));
    }
    let norm = h.frobenius_norm();
    let defect = h.hermiticity_defect();
    if defect > EIG_HERMITIAN_TOL * norm {
        return Err(QrcError::Validation(format!(
            "matrix is not Hermitian: ||H - H^H||_F = {defect:e}, ||H||_F = {norm:e}"
        )));
    }
    let mut sym = h.clone();
    sym.hermitize();
    Ok(sym)
}

fn real_part(h: &ComplexMatrix) -> Mat<f64> {
    Mat::from_fn(h.rows(), h.cols(), |i, j| h.get(i, j).re)
}

fn no_convergence(dim: usize, err: impl std::fmt::Debug) -> QrcError {
    QrcError::Numeric(format!(
        "Hermitian eigensolver did not converge on a {dim}x{dim} matrix ({err:?})"
    ))
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Input within `1e-10·‖H‖_F` of Hermitian is symmetrized first. Matrices whose
/// entries are all real are routed through the real symmetric solver, which
/// yields real orthonormal eigenvectors.
pub fn hermitian_eig(h: &ComplexMatrix) -> Result<EigenSystem> {
    let sym = symmetrized(h)?;
    let n = sym.rows();
    if sym.max_abs_imag() == 0.0 {
        let evd = real_part(&sym)
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| no_convergence(n, e))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        Ok(EigenSystem {
            eigenvalues: (0..n).map(|i| s[i]).collect(),
            eigenvectors: ComplexMatrix::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)),
        })
    } else {
        let evd = sym
            .as_faer()
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| no_convergence(n, e))?;
        let s = evd.S().column_vector();
        Ok(EigenSystem {
            eigenvalues: (0..n).map(|i| s[i].re).collect(),
            eigenvectors: ComplexMatrix::from_faer(evd.U().to_owned()),
        })
    }
}

/// Ascending eigenvalues only; same validation as [`hermitian_eig`].
pub fn hermitian_eigenvalues(h: &ComplexMatrix) -> Result<Vec<f64>> {
    let sym = symmetrized(h)?;
    let n = sym.rows();
    if sym.max_abs_imag() == 0.0 {
        real_part(&sym)
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| no_convergence(n, e))
    } else {
        sym.as_faer()
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| no_convergence(n, e))
    }
}

/// `U = V · diag(e^{−iλ_j dt}) · V†`.
pub fn propagator(eig: &EigenSystem, dt: f64) -> Result<ComplexMatrix> {
    if !dt.is_finite() {
        return Err(QrcError::Validation(format!("time step must be finite, got {dt}")));
    }
    if eig.eigenvectors.rows() != eig.dim() || eig.eigenvectors.cols() != eig.dim() {
        return Err(QrcError::Shape("eigenvector matrix does not match spectrum".into()));
    }
    let phases: Vec<C64> = eig
        .eigenvalues
        .iter()
        .map(|&l| C64::from_polar(1.0, -l * dt))
        .collect();
    let scaled = scale_columns(&eig.eigenvectors, |j| phases[j]);
    Ok(mul_adjoint(&scaled, &eig.eigenvectors))
}
