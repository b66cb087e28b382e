//! Numerical laboratory for exponentially small splitting of separatrices in
//! rapidly forced one-degree-of-freedom Hamiltonian systems
//! `H0(x, y) + mu * eps^eta * H1(x, y, t/eps)`.

pub mod cli;
pub mod error;
pub mod inner;
pub mod melnikov;
pub mod model;
pub mod numerics;
pub mod separatrix;
pub mod splitting;

pub use error::{Error, Result};
