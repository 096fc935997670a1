//! Testing for and estimating the dimension of the non-Gaussian signal
//! subspace with two scatter functionals.

pub mod error;
pub mod estimator;
pub mod hypothesis;
pub mod linalg;
pub mod rng;
pub mod scatter;
pub mod simulation;
pub mod unmixing;

pub use error::{Error, Result};
