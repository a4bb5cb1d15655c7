//! Coupled constructions of locally stable Gibbs point processes as
//! dependent thinnings of a dominating Poisson process.

pub mod dominating;
pub mod error;
pub mod geometry;
pub mod graphs;
pub mod model;
pub mod partition;
pub mod prf;
pub mod scores;
pub mod stats;
pub mod thinning;

pub use error::{Error, Result};
