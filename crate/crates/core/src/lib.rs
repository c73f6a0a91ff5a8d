//! Numerical laboratory for weighted Hardy and Friedrichs inequalities on a
//! rectangle whose left side alternates Dirichlet and free pieces.

pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod ineq;
pub mod maxop;
pub mod sharp;

pub use error::{LabError, Result};
pub use field::{Grid, ScalarField};
pub use geometry::GeometryConfig;
