//! Deferred Correction (DeC), splitting DeC (sDeC) and ADER time integrators
//! written as explicit, implicit and IMEX Runge–Kutta tableaux, with tools for
//! their ODE stability regions and the von Neumann analysis of the
//! finite-difference schemes they drive.

pub mod error;
pub mod integrator;
pub mod linalg;
pub mod pde;
pub mod quadrature;
pub mod stability;
pub mod stencils;
pub mod tableaux;
pub mod von_neumann;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

/// Library version, recorded in the metadata of every CLI job.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
