//! The monotone discrete operator `F^h`.
//!
//! At a grid point `x0` with discrete gradient `p` and target `y = T(x0, p)`,
//!
//! ```text
//! F = min_{(ν, ν⊥)} Π max{ D_νν u + g1(p; ν) + ε1 Δʰu, 0 } − f1(x0) (g2(p) − ε2 Δʰu)
//! ```
//!
//! with `g1(p; ν)` the stencil second difference of `c(·, y)` and
//! `g2(p) = (|p|² + 1)² / (4 f2(y))`. The `ε Δʰu` terms dominate the
//! dependence on the gradient, which keeps the scheme monotone.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::density::{Density, Interpolant};
use crate::optics::{mixed_hessian_det, optical_map, DELTA_MIN};
use crate::sphere_grid::SphereGrid;
use crate::stencil::{apply_second_derivative, DirectionalStencil, StencilTable};
use crate::{Error, Result, Vec3};

/// Tuning of the gradient-function Lipschitz estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorParams {
    /// Radius of the gradient ball sampled around each point's current
    /// gradient.
    pub lipschitz_radius: f64,
    /// Factor applied to the largest sampled gradient norm.
    pub safety: f64,
    /// Support of the target-density interpolant in units of `h`.
    pub interp_support: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        OperatorParams {
            lipschitz_radius: 0.5,
            safety: 2.0,
            interp_support: 2.0,
        }
    }
}

/// Which side of the Laplacian regularization to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// `g − ε Δʰu`.
    Plus,
    /// `g + ε Δʰu`.
    Minus,
}

/// `g ∓ ε Δʰu`.
#[inline]
pub fn regularized_gradient_value(g: f64, eps: f64, laplacian: f64, sign: Sign) -> f64 {
    match sign {
        Sign::Plus => g - eps * laplacian,
        Sign::Minus => g + eps * laplacian,
    }
}

/// `Σ a_j (c(x_j, y) − c(x0, y))` for the cost `c = −2 log |x − y|`,
/// evaluated at the grid points of the stencil.
pub fn g1(grid: &SphereGrid, stencil: &DirectionalStencil, y: &Vec3) -> Result<f64> {
    let c0 = crate::optics::cost(grid.point(stencil.center as usize), y)?;
    let mut sum = 0.0;
    for (a, &j) in stencil.a.iter().zip(&stencil.neighbors) {
        sum += a * (crate::optics::cost(grid.point(j as usize), y)? - c0);
    }
    Ok(sum)
}

/// `(|p|² + 1)² / (4 f2(y))`.
pub fn g2(p: [f64; 2], f2_at_target: f64) -> Result<f64> {
    if !(f2_at_target > 0.0) {
        return Err(Error::Domain(format!(
            "target density must be positive at the mapped direction, got {f2_at_target}"
        )));
    }
    Ok(mixed_hessian_det(p) / f2_at_target)
}

/// `max_j |b_j| / |a_j|` over both coordinate stencils at point `i`.
pub fn coefficient_ratio(table: &StencilTable, i: usize) -> f64 {
    (0..2)
        .flat_map(|ax| {
            let s = table.coordinate(i, ax);
            (0..4).map(move |j| s.b[j].abs() / s.a[j].abs())
        })
        .fold(0.0, f64::max)
}

/// `ε_g = L_g · max_j |b_j| / |a_j|`.
pub fn epsilon_for(lipschitz: f64, table: &StencilTable, i: usize) -> f64 {
    lipschitz * coefficient_ratio(table, i)
}

/// Grid, stencils, densities and regularization parameters.
#[derive(Debug)]
pub struct OperatorContext<'a> {
    grid: &'a SphereGrid,
    table: &'a StencilTable,
    f1: Vec<f64>,
    f2: Vec<f64>,
    params: OperatorParams,
    ratio: Vec<f64>,
    centers: Vec<[f64; 2]>,
    l_g1: Vec<f64>,
    l_g2: Vec<f64>,
    refreshes: usize,
}

/// Sample offsets in the unit disk: the center and two rings.
fn sample_offsets() -> Vec<[f64; 2]> {
    let mut out = vec![[0.0, 0.0]];
    for (radius, count, phase) in [(0.5, 6, 0.0), (1.0, 8, 0.3)] {
        for k in 0..count {
            let t = phase + 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            out.push([radius * t.cos(), radius * t.sin()]);
        }
    }
    out
}

impl<'a> OperatorContext<'a> {
    /// Builds the context and estimates the Lipschitz constants around
    /// the zero gradient.
    pub fn new(
        grid: &'a SphereGrid,
        table: &'a StencilTable,
        f1: &Density,
        f2: &Density,
        params: OperatorParams,
    ) -> Result<Self> {
        table.check_grid(grid)?;
        if f1.len() != grid.len() || f2.len() != grid.len() {
            return Err(Error::Domain("densities do not match the grid size".into()));
        }
        if let Some(i) = f2.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!(
                "target density must be strictly positive (point {i} has {})",
                f2.values()[i]
            )));
        }
        if !(params.lipschitz_radius > 0.0 && params.safety > 0.0 && params.interp_support > 1.0) {
            return Err(Error::Config(format!("invalid operator parameters {params:?}")));
        }
        let n = grid.len();
        let mut ctx = OperatorContext {
            grid,
            table,
            f1: f1.values().to_vec(),
            f2: f2.values().to_vec(),
            params,
            ratio: (0..n).map(|i| coefficient_ratio(table, i)).collect(),
            centers: vec![[0.0, 0.0]; n],
            l_g1: vec![0.0; n],
            l_g2: vec![0.0; n],
            refreshes: 0,
        };
        let all: Vec<usize> = (0..n).collect();
        ctx.estimate(&all, &vec![[0.0, 0.0]; n])?;
        Ok(ctx)
    }

    /// Overrides the Lipschitz constants with fixed values at every point.
    pub fn with_fixed_lipschitz(mut self, l_g1: f64, l_g2: f64) -> Self {
        self.l_g1.fill(l_g1);
        self.l_g2.fill(l_g2);
        self.params.lipschitz_radius = f64::INFINITY;
        self
    }

    pub fn grid(&self) -> &SphereGrid {
        self.grid
    }

    pub fn table(&self) -> &StencilTable {
        self.table
    }

    pub fn f1(&self) -> &[f64] {
        &self.f1
    }

    pub fn f2(&self) -> &[f64] {
        &self.f2
    }

    pub fn lipschitz(&self, i: usize) -> (f64, f64) {
        (self.l_g1[i], self.l_g2[i])
    }

    /// `(ε1, ε2)` at point `i`.
    pub fn epsilon(&self, i: usize) -> (f64, f64) {
        (self.l_g1[i] * self.ratio[i], self.l_g2[i] * self.ratio[i])
    }

    /// Number of Lipschitz re-estimations after construction.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    /// Target density at an arbitrary direction.
    #[inline]
    pub fn f2_at(&self, y: &Vec3) -> f64 {
        Interpolant::new(self.grid, &self.f2, self.params.interp_support * self.grid.h()).eval(y)
    }

    /// All `g1(p; ν_k)` at point `i`, for `k` over the directional stencils,
    /// together with `g2(p)`.
    fn gradient_functions(&self, i: usize, p: [f64; 2], g1_out: &mut [f64]) -> f64 {
        let frame = self.grid.frame(i);
        let y = optical_map(frame, p);
        let costs = self.neighbor_costs(i, &y);
        let c0 = cost_fast(&frame.origin, &y);
        for (k, s) in self.table.point_stencils(i)[..g1_out.len()].iter().enumerate() {
            g1_out[k] = (0..4).map(|j| s.a[j] * (costs[s.local[j] as usize] - c0)).sum();
        }
        mixed_hessian_det(p) / self.f2_at(&y)
    }

    fn neighbor_costs(&self, i: usize, y: &Vec3) -> Vec<f64> {
        self.table
            .neighbors(i)
            .iter()
            .map(|&j| cost_fast(self.grid.point(j as usize), y))
            .collect()
    }

    /// Re-estimates `L_g1`, `L_g2` at `points` over the ball of gradients
    /// around `centers[i]`: twice the largest central-difference gradient
    /// norm over a fixed sample of the ball.
    fn estimate(&mut self, points: &[usize], centers: &[[f64; 2]]) -> Result<()> {
        let offsets = sample_offsets();
        let radius = self.params.lipschitz_radius;
        let dirs = self.table.directions().len();
        let results: Vec<(usize, f64, f64)> = points
            .par_iter()
            .map(|&i| {
                let c = centers[i];
                let step = 1e-4 * (1.0 + c[0].hypot(c[1]));
                let mut buf_p = vec![0.0; dirs];
                let mut buf_m = vec![0.0; dirs];
                let (mut l1, mut l2): (f64, f64) = (0.0, 0.0);
                for o in &offsets {
                    let p = [c[0] + radius * o[0], c[1] + radius * o[1]];
                    let mut grad1 = vec![[0.0; 2]; dirs];
                    let mut grad2 = [0.0; 2];
                    for axis in 0..2 {
                        let mut pp = p;
                        let mut pm = p;
                        pp[axis] += step;
                        pm[axis] -= step;
                        let gp = self.gradient_functions(i, pp, &mut buf_p);
                        let gm = self.gradient_functions(i, pm, &mut buf_m);
                        grad2[axis] = (gp - gm) / (2.0 * step);
                        for k in 0..dirs {
                            grad1[k][axis] = (buf_p[k] - buf_m[k]) / (2.0 * step);
                        }
                    }
                    l2 = l2.max(grad2[0].hypot(grad2[1]));
                    for g in &grad1 {
                        l1 = l1.max(g[0].hypot(g[1]));
                    }
                }
                (i, self.params.safety * l1, self.params.safety * l2)
            })
            .collect();
        for (i, l1, l2) in results {
            if !(l1.is_finite() && l2.is_finite()) {
                return Err(Error::Domain(format!("non-finite Lipschitz estimate at point {i}")));
            }
            self.l_g1[i] = l1;
            self.l_g2[i] = l2;
            self.centers[i] = centers[i];
        }
        Ok(())
    }

    /// Re-estimates the Lipschitz constants at points whose discrete
    /// gradient has left the inner half of its sampled ball. Returns the
    /// number of points updated.
    pub fn update_lipschitz(&mut self, u: &[f64]) -> Result<usize> {
        let half = 0.5 * self.params.lipschitz_radius;
        let grads: Vec<[f64; 2]> = (0..self.grid.len()).map(|i| self.table.gradient(i, u)).collect();
        let drifted: Vec<usize> = (0..self.grid.len())
            .filter(|&i| {
                let c = self.centers[i];
                (grads[i][0] - c[0]).hypot(grads[i][1] - c[1]) > half
            })
            .collect();
        if !drifted.is_empty() {
            self.estimate(&drifted, &grads)?;
            self.refreshes += 1;
            log::debug!("re-estimated Lipschitz constants at {} points", drifted.len());
        }
        Ok(drifted.len())
    }

    /// `F^h` at point `i`.
    pub fn evaluate(&self, i: usize, u: &[f64]) -> Result<f64> {
        let table = self.table;
        let stencils = table.point_stencils(i);
        let m = table.directions().pair_count();
        let p = table.gradient(i, u);
        let lap = table.laplacian(i, u);
        let frame = self.grid.frame(i);
        let y = optical_map(frame, p);

        let near = table
            .neighbors(i)
            .iter()
            .map(|&j| self.grid.point(j as usize))
            .chain([&frame.origin])
            .map(|x| 2.0 - 2.0 * x.dot(&y))
            .fold(f64::INFINITY, f64::min);
        if !(near >= DELTA_MIN * DELTA_MIN) {
            return Err(Error::SingularCost(near.max(0.0).sqrt()));
        }
        let costs = self.neighbor_costs(i, &y);
        let c0 = cost_fast(&frame.origin, &y);
        let (eps1, eps2) = self.epsilon(i);

        let value = |s: &DirectionalStencil| -> f64 {
            let u0 = u[i];
            let mut d = 0.0;
            let mut g = 0.0;
            for j in 0..4 {
                d += s.a[j] * (u[s.neighbors[j] as usize] - u0);
                g += s.a[j] * (costs[s.local[j] as usize] - c0);
            }
            (d + g + eps1 * lap).max(0.0)
        };
        let mut best = f64::INFINITY;
        for k in 0..m {
            best = best.min(value(&stencils[k]) * value(&stencils[k + m]));
        }
        let f2y = self.f2_at(&y);
        let rhs = regularized_gradient_value(g2(p, f2y)?, eps2, lap, Sign::Plus);
        let f = best - self.f1[i] * rhs;
        if !f.is_finite() {
            return Err(Error::Domain(format!("operator value is not finite at point {i}")));
        }
        Ok(f)
    }

    /// Reference evaluation through the public building blocks: checked
    /// costs and an explicit scan over all pairs.
    pub fn evaluate_reference(&self, i: usize, u: &[f64]) -> Result<f64> {
        let table = self.table;
        let m = table.directions().pair_count();
        let p = table.gradient(i, u);
        let lap = table.laplacian(i, u);
        let y = optical_map(self.grid.frame(i), p);
        let (eps1, eps2) = self.epsilon(i);
        let mut values = Vec::with_capacity(m);
        for k in 0..m {
            let mut prod = 1.0;
            for s in [table.directional(i, k), table.directional(i, k + m)] {
                let g = regularized_gradient_value(g1(self.grid, s, &y)?, eps1, lap, Sign::Minus);
                prod *= (apply_second_derivative(s, u) + g).max(0.0);
            }
            values.push(prod);
        }
        let best = values.into_iter().fold(f64::INFINITY, f64::min);
        let rhs = regularized_gradient_value(g2(p, self.f2_at(&y))?, eps2, lap, Sign::Plus);
        Ok(best - self.f1[i] * rhs)
    }

    /// `F^h` at every point, in parallel. Per-point failures are collected.
    pub fn evaluate_all(&self, u: &[f64]) -> Result<Vec<f64>> {
        let results: Vec<Result<f64>> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| self.evaluate(i, u))
            .collect();
        collect_point_results(results)
    }
}

#[inline]
fn cost_fast(x: &Vec3, y: &Vec3) -> f64 {
    crate::optics::cost_unit(x, y)
}

pub(crate) fn collect_point_results(results: Vec<Result<f64>>) -> Result<Vec<f64>> {
    let count = results.iter().filter(|r| r.is_err()).count();
    if count == 0 {
        return Ok(results.into_iter().map(|r| r.unwrap()).collect());
    }
    let (first_point, first) = results
        .into_iter()
        .enumerate()
        .find_map(|(i, r)| r.err().map(|e| (i, e)))
        .unwrap();
    Err(Error::PointFailures {
        count,
        first_point,
        first: Box::new(first),
    })
}

/// `F^h` at a single point.
#[allow(non_snake_case)]
pub fn evaluate_F(ctx: &OperatorContext<'_>, i: usize, u: &[f64]) -> Result<f64> {
    ctx.evaluate(i, u)
}

/// `F^h` at every grid point.
#[allow(non_snake_case)]
pub fn evaluate_F_all(ctx: &OperatorContext<'_>, u: &[f64]) -> Result<Vec<f64>> {
    ctx.evaluate_all(u)
}

/// Writes `point_id,residual` rows.
pub fn write_residual_csv(path: &Path, residual: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "point_id,residual")?;
    for (i, r) in residual.iter().enumerate() {
        writeln!(out, "{i},{r:.12e}")?;
    }
    out.flush()?;
    Ok(())
}
