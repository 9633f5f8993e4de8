//! Parabolic optimal-transport flow on the circle and the sphere.
//!
//! This crate discretizes the potential flow `du/dt = theta(x, u)` whose
//! stationary points are solutions of the optimal-transport equation
//! between prescribed densities, for two cost functions on the unit
//! sphere and unit circle: half squared geodesic distance and the
//! reflector-antenna cost `-log |x - xbar|`.
//!
//! The main pieces:
//!
//! * [`geometry`] - stereographic charts, metric, exponential map;
//! * [`grid`] - overlapping chart lattices, quadrature, ghost exchange;
//! * [`jets`] - truncated Taylor arithmetic driving cost derivatives;
//! * [`cost`] - the two cost models and their derivative tables;
//! * [`density`] - closed-form density families, grid-normalized;
//! * [`mtw`] - the Ma-Trudinger-Wang curvature tensor and its sampling;
//! * [`transport`] - the contact relation `Du + D_x c(x, T) = 0` solver;
//! * [`flow`] - explicit time stepping of the potential;
//! * [`diagnostics`] - the linearized operator, decay fits, monitors;
//! * [`oracle`] - independent references (circle rearrangement, MTW by finite differences);
//! * [`config`] / [`output`] - run configuration and result files.

pub mod config;
pub mod cost;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod jets;
pub mod mtw;
pub mod oracle;
pub mod output;
pub mod transport;

pub use error::{Error, Result};
