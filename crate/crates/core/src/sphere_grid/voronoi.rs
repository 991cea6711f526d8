//! Spherical Voronoi cells.
//!
//! Each cell `{q : q·x0 ≥ q·xj for all j}` is an intersection of hemispheres
//! bounded by the great-circle bisectors; its vertices are the circumcenters
//! of the Delaunay (convex hull) facets around `x0`. In the gnomonic chart at
//! `x0` the bisectors are straight lines, so the cell is a convex polygon
//! obtained by half-plane clipping. Only neighbors closer than twice the
//! current cell radius can cut the cell, which bounds the search.

use std::f64::consts::PI;

use super::{arc, SpatialIndex, TangentFrame};
use crate::{Error, Result, Vec3};

/// Half-width of the initial gnomonic square (about 89.9° from the site).
const CHART_BOUND: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct VoronoiCells {
    /// Cell areas in steradians.
    pub areas: Vec<f64>,
    /// Largest geodesic distance from each site to a vertex of its cell.
    pub radii: Vec<f64>,
}

impl VoronoiCells {
    /// Exact covering radius of the point set.
    pub fn covering_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }
}

/// Keeps the part of `poly` where `c + a·X + b·Y ≥ 0`.
fn clip(poly: &[[f64; 2]], a: f64, b: f64, c: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for (k, p) in poly.iter().enumerate() {
        let q = &poly[(k + 1) % poly.len()];
        let sp = c + a * p[0] + b * p[1];
        let sq = c + a * q[0] + b * q[1];
        if sp >= 0.0 {
            out.push(*p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

fn lift(frame: &TangentFrame, p: &[f64; 2]) -> Vec3 {
    (frame.origin + frame.to_ambient(*p)).normalize()
}

fn cell_radius(poly: &[[f64; 2]]) -> f64 {
    poly.iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt().atan())
        .fold(0.0, f64::max)
}

/// Area of the spherical polygon as a fan of triangles from the site.
fn spherical_area(frame: &TangentFrame, poly: &[[f64; 2]]) -> f64 {
    let x0 = frame.origin;
    let verts: Vec<Vec3> = poly.iter().map(|p| lift(frame, p)).collect();
    let mut area = 0.0;
    for k in 0..verts.len() {
        let (a, b) = (&verts[k], &verts[(k + 1) % verts.len()]);
        let triple = x0.dot(&a.cross(b));
        let denom = 1.0 + x0.dot(a) + a.dot(b) + b.dot(&x0);
        area += 2.0 * triple.abs().atan2(denom);
    }
    area
}

fn build_cell(points: &[Vec3], index: &SpatialIndex, site: usize, initial_radius: f64) -> Result<(f64, f64)> {
    let x0 = points[site];
    let frame = TangentFrame::at(&x0);
    let mut poly = vec![
        [-CHART_BOUND, -CHART_BOUND],
        [CHART_BOUND, -CHART_BOUND],
        [CHART_BOUND, CHART_BOUND],
        [-CHART_BOUND, CHART_BOUND],
    ];
    let mut search = initial_radius.min(PI);
    let mut applied = 0usize;
    loop {
        let s = (0.5 * search).sin();
        let mut near: Vec<(usize, f64)> = index
            .within_chord2(&x0, if search >= PI { 4.1 } else { 4.0 * s * s })
            .into_iter()
            .filter(|&(id, _)| id != site)
            .collect();
        near.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut exhausted = true;
        for (k, &(id, _)) in near.iter().enumerate() {
            let xj = points[id];
            let dj = arc(&x0, &xj);
            if dj < 1e-12 {
                return Err(Error::Geometry(format!(
                    "points {site} and {id} coincide"
                )));
            }
            if k >= applied {
                let radius = cell_radius(&poly);
                if dj > 2.0 * radius + 1e-12 {
                    exhausted = false;
                    break;
                }
                poly = clip(&poly, -frame.e1.dot(&xj), -frame.e2.dot(&xj), 1.0 - x0.dot(&xj));
                if poly.len() < 3 {
                    return Err(Error::Geometry(format!("Voronoi cell of point {site} collapsed")));
                }
                applied = k + 1;
            }
        }
        let radius = cell_radius(&poly);
        if !exhausted || search >= PI || 2.0 * radius <= search {
            break;
        }
        search = (2.0 * radius * 1.05).min(PI);
    }
    let bound = CHART_BOUND * (1.0 - 1e-9);
    if poly.iter().any(|p| p[0].abs() >= bound || p[1].abs() >= bound) {
        return Err(Error::Geometry(format!(
            "Voronoi cell of point {site} is not contained in an open hemisphere \
             (degenerate or coplanar point set)"
        )));
    }
    Ok((spherical_area(&frame, &poly), cell_radius(&poly)))
}

/// Voronoi cell areas (and cell radii) of a set of unit vectors.
pub fn voronoi_areas(points: &[Vec3], index: &SpatialIndex) -> Result<VoronoiCells> {
    if points.len() < 4 {
        return Err(Error::Geometry(format!(
            "Voronoi diagram needs at least 4 points, got {}",
            points.len()
        )));
    }
    let initial = 3.0 * (4.0 * PI / points.len() as f64).sqrt();
    let mut areas = Vec::with_capacity(points.len());
    let mut radii = Vec::with_capacity(points.len());
    for site in 0..points.len() {
        let (area, radius) = build_cell(points, index, site, initial)?;
        areas.push(area);
        radii.push(radius);
    }
    Ok(VoronoiCells { areas, radii })
}
