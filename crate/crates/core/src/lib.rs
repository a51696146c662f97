//! Symplectic index theory and Morse index computations for closed geodesics
//! in semi-Riemannian manifolds with a timelike Killing field.

pub mod bilinear;
pub mod error;
pub mod expr;
pub mod geodesic;
pub mod iteration;
pub mod linalg;
pub mod manifold;
pub mod morse;
pub mod ode;
pub mod report;
pub mod selftest;
pub mod symplectic;
pub mod transport;

pub use error::{Error, Result};
