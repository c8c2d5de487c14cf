//! Dense complex linear algebra for Hilbert spaces of up to a few thousand
//! dimensions.

mod density;
mod eigen;
mod matrix;

pub use density::{
    frobenius_distance, kron, partial_trace_first, partial_trace_first_matrix,
    random_density_matrix, DensityMatrix, HERMITIAN_TOL, PSD_TOL, TRACE_TOL,
};
pub use eigen::{hermitian_eig, hermitian_eigenvalues, propagator, EigenSystem, EIG_HERMITIAN_TOL};
pub use matrix::{ComplexMatrix, MAX_SIDE};
pub use num_complex::Complex64 as C64;
