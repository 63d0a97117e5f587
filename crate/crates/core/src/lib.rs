//! Numerical laboratory for the Alt-Caffarelli-Friedman and
//! Caffarelli-Jerison-Kenig monotonicity formulas of the Laplace-Beltrami
//! operator on geodesic balls, plus a two-phase free boundary solver.
//!
//! The numerical core is generic over the scalar type ([`Real`], `f32` or
//! `f64`); the `*64` aliases below fix it to `f64`, which is what the
//! experiment runner uses.

pub mod ballgrid;
pub mod error;
pub mod expcli;
pub mod fbsolver;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod monotone;
pub mod operator;
pub mod pairs;
pub mod scalar;
pub(crate) mod stencil;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ModelMetric64 = geometry::ModelMetric<f64>;
pub type BallGrid64 = ballgrid::BallGrid<f64>;
