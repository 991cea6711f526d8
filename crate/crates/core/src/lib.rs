//! Reflector antenna design by optimal transport on the unit sphere.
//!
//! The far-field reflector problem is posed as a Monge-Ampère type equation
//! for a potential `u` on S², with reflector radius `rho = exp(-u)`. The
//! equation is discretized with monotone wide stencils built on the local
//! tangent planes of a point cloud, solved by a damped explicit parabolic
//! iteration and validated by ray tracing.
//!
//! Pipeline, bottom up:
//!
//! - [`sphere_grid`]: point sets on S², geodesic helpers, Voronoi areas.
//! - [`stencil`]: direction sets, four-point wide stencils and their
//!   finite-difference coefficients, the discrete Laplace-Beltrami operator.
//! - [`optics`]: cost function, optical map, reflection law, reflector surface.
//! - [`density`]: intensities on the grid and their preprocessing.
//! - [`ma_operator`]: the monotone discrete operator `F^h`.
//! - [`solver`]: the parabolic iteration to steady state.
//! - [`raytrace`]: forward/inverse tracing and intensity reconstruction.

pub mod density;
pub mod error;
pub mod ma_operator;
pub mod optics;
pub mod raytrace;
pub mod solver;
pub mod sphere_grid;
pub mod stencil;

pub use error::{Error, Result};

/// Ambient 3-vector. Points on the sphere and tangent vectors share this type.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Scalar values over the grid, indexed by point id.
pub type GridFunction = Vec<f64>;
