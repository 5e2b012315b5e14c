//! Numerical laboratory for the convergence theory of asynchronous SGD.
//!
//! The crate simulates ASGD with delayed gradients, integrates its
//! stochastic modified equation (a damped second-order SDE), solves the
//! kinetic Fokker–Planck equation of the fluctuation around equilibrium
//! with a Hermite–Galerkin method, and checks the hypocoercive decay
//! certificates against spectral and Monte Carlo oracles.

pub mod asgd;
pub mod error;
pub mod harness;
pub mod hypo;
pub mod kfp;
pub mod loss;
pub mod moments;
pub mod params;
pub mod sme;
pub mod staleness;

pub use error::{Error, Result};
