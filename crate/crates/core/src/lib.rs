//! Numerical laboratory for optimal transport under evolving model metrics.

pub mod costs;
pub mod coupling;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod lflow;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
