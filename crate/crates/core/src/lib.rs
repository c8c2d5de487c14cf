//! Quantum reservoir computing on disordered spin networks.
//!
//! The crate covers the full pipeline: Hamiltonian construction and exact
//! diagonalization, gap-ratio statistics, the input-injection map acting on
//! density matrices, linear readout training, benchmark targets and the
//! information processing capacity, plus a batch experiment runner.

pub mod error;
pub mod experiments;
pub mod learn;
pub mod linalg;
pub mod output;
pub mod reservoir;
pub mod seed;
pub mod spectral;
pub mod spin_model;
pub mod tasks;

pub use error::{QrcError, Result};
