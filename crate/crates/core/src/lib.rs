//! Determinant-state subspace methods and Bridge post-processing for
//! variational quantum dynamics, at desk scale with exact oracles.

pub mod error;
pub mod bridge;
pub mod det_state;
pub mod dynamics;
pub mod linalg;
pub mod oracle;
pub mod rayleigh;
pub mod spin_model;
pub mod state;
pub mod subspace;
pub mod xprec;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
