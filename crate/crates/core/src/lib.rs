//! Stochastic trapped-ion simulation of the quantum Rabi and Dirac models under
//! concatenated continuous dynamical decoupling.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod hamiltonian;
pub mod linalg;
pub mod noise;
pub mod observables;
pub mod propagate;
pub mod units;
pub mod validate;

pub use error::{Error, Result};
