//! Numerical laboratory for Ornstein-Uhlenbeck semigroups on R^n with a
//! general covariance Q and a stable drift B: the matrix family (Q_t, D_t),
//! the Mehler transition kernel, invariant-measure polar coordinates, and
//! Monte Carlo experiments on the associated maximal function.

pub mod config;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod interp;
pub mod kernel;
pub mod maximal;
pub mod linalg;
pub mod model;
pub mod output;
pub mod quad;
pub mod report;
pub mod sim;

pub use error::{OuError, Result};
pub use gaussian::GaussianMeasure;
pub use model::{DriftRoute, OUModel};
pub use report::{BoundReport, Sidedness};
