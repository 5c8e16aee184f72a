//! Numerical laboratory for Hofer geometry of Hamiltonian diffeomorphism groups.

pub mod error;
pub mod grid;
pub mod hofer;
pub mod linflow;
pub mod numerics;
pub mod ode;
pub mod secondvar;
pub mod shortening;
pub mod sphere;
pub mod symplectic;

pub use error::{LabError, Result};
