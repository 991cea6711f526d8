//! Geometric optics of a point-source far-field reflector.
//!
//! A ray leaving the source in direction `x` hits the reflector at `x ρ(x)`
//! and leaves in direction `T(x)`. With `ρ = e^{-u}` the map depends only on
//! the tangential gradient of `u`, and it is the optimal map for the cost
//! `c(x, y) = −2 log |x − y|`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::sphere_grid::{SphereGrid, TangentFrame};
use crate::stencil::StencilTable;
use crate::{Error, Result, Vec3};

/// Smallest `|x − y|` for which the cost is evaluated.
pub const DELTA_MIN: f64 = 1e-10;

/// `c(x, y) = −2 log |x − y|`.
pub fn cost(x: &Vec3, y: &Vec3) -> Result<f64> {
    let d = (x - y).norm();
    if !(d >= DELTA_MIN) {
        return Err(Error::SingularCost(d));
    }
    Ok(-2.0 * d.ln())
}

/// The cost for unit vectors as `−log(2 − 2 x·y)`, clamped at the singular
/// guard. Used in inner loops where the inputs are known to be unit.
#[inline]
pub(crate) fn cost_unit(x: &Vec3, y: &Vec3) -> f64 {
    -(2.0 - 2.0 * x.dot(y)).max(DELTA_MIN * DELTA_MIN).ln()
}

/// `T(x, p) = (−2p + (|p|² − 1) x) / (|p|² + 1)` with `p` given in the frame
/// at `x`.
#[inline]
pub fn optical_map(frame: &TangentFrame, p: [f64; 2]) -> Vec3 {
    let g = frame.to_ambient(p);
    optical_map_ambient(&frame.origin, &g)
}

/// [`optical_map`] with the gradient as an ambient tangent vector.
#[inline]
pub fn optical_map_ambient(x: &Vec3, g: &Vec3) -> Vec3 {
    let q = g.norm_squared();
    (g * -2.0 + x * (q - 1.0)) / (q + 1.0)
}

/// `det D²_xy c` along the optimal map: `(|p|² + 1)² / 4`.
#[inline]
pub fn mixed_hessian_det(p: [f64; 2]) -> f64 {
    let q = p[0] * p[0] + p[1] * p[1] + 1.0;
    0.25 * q * q
}

/// `n = (∇ρ − xρ) / √(ρ² + |∇ρ|²)`.
pub fn surface_normal(frame: &TangentFrame, rho: f64, grad_rho: [f64; 2]) -> Result<Vec3> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("reflector radius must be positive, got {rho}")));
    }
    let g = frame.to_ambient(grad_rho);
    Ok((g - frame.origin * rho) / (rho * rho + g.norm_squared()).sqrt())
}

/// Law of reflection `x − 2⟨x, n⟩ n`.
#[inline]
pub fn reflect_direction(x: &Vec3, n: &Vec3) -> Vec3 {
    x - n * (2.0 * x.dot(n))
}

/// Reflector surface `{x ρ(x)}` over the grid directions.
#[derive(Debug, Clone)]
pub struct Reflector {
    pub directions: Vec<Vec3>,
    pub u: Vec<f64>,
    pub rho: Vec<f64>,
    pub surface: Vec<Vec3>,
}

/// `ρ = e^{-u}` at every grid point.
pub fn build_reflector(grid: &SphereGrid, u: &[f64]) -> Reflector {
    let rho: Vec<f64> = u.iter().map(|v| (-v).exp()).collect();
    let surface = grid.points().iter().zip(&rho).map(|(x, r)| x * *r).collect();
    Reflector {
        directions: grid.points().to_vec(),
        u: u.to_vec(),
        rho,
        surface,
    }
}

impl Reflector {
    /// Reflected directions from the discrete normal of the surface, using
    /// `∇ρ = −ρ ∇u` with the stencil gradient.
    pub fn reflected_directions(&self, grid: &SphereGrid, table: &StencilTable) -> Result<Vec<Vec3>> {
        (0..grid.len())
            .map(|i| {
                let [p1, p2] = table.gradient(i, &self.u);
                let rho = self.rho[i];
                let n = surface_normal(grid.frame(i), rho, [-rho * p1, -rho * p2])?;
                Ok(reflect_direction(grid.point(i), &n))
            })
            .collect()
    }

    /// ASCII PLY point cloud of the surface points.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "element vertex {}", self.surface.len())?;
        writeln!(out, "property double x")?;
        writeln!(out, "property double y")?;
        writeln!(out, "property double z")?;
        writeln!(out, "end_header")?;
        for s in &self.surface {
            writeln!(out, "{:.12e} {:.12e} {:.12e}", s.x, s.y, s.z)?;
        }
        out.flush()?;
        Ok(())
    }

    /// CSV with columns `dir_x,dir_y,dir_z,u,rho`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "dir_x,dir_y,dir_z,u,rho")?;
        for ((d, u), r) in self.directions.iter().zip(&self.u).zip(&self.rho) {
            writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", d.x, d.y, d.z, u, r)?;
        }
        out.flush()?;
        Ok(())
    }
}
