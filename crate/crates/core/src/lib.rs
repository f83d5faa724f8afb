//! Numerical valuation of American two-asset options under the Merton
//! jump-diffusion model by operator splitting time stepping.

pub mod diff;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod jump;
pub mod model;
pub mod problem;
pub mod solvers;
pub mod steppers;
pub mod xcorr;

pub use error::{Error, Result};
