//! Space–time Galerkin discretization of the wave equation with B-splines.

pub mod analysis;
pub mod assembly;
pub mod discretization;
pub mod driver;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod geometry;
pub mod linsolve;
pub mod problem;
pub mod quadrature;
pub mod sparse;
pub mod splines;

pub use error::{Error, Result};
