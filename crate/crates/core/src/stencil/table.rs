use rayon::prelude::*;

use super::{build_stencil, direction_set, Candidate, DirectionSet, DirectionalStencil, Relaxation, COORDINATE_ANGLES};
use crate::sphere_grid::{arc, cap_neighbors_of, normal_coordinates, SphereGrid};
use crate::{Error, Result};

/// All stencils of a grid: per point, the `2M` directional stencils followed
/// by the `(1,0)` and `(0,1)` coordinate stencils.
///
/// Each point also owns the sorted list of distinct neighbor ids used by its
/// stencils, so per-point quantities can be evaluated once per neighbor.
#[derive(Debug, Clone)]
pub struct StencilTable {
    pub(super) h: f64,
    pub(super) directions: DirectionSet,
    pub(super) grid_hash: [u8; 32],
    pub(super) stencils: Vec<DirectionalStencil>,
    pub(super) offsets: Vec<u32>,
    pub(super) neighbor_ids: Vec<u32>,
    pub(super) neighbor_dist: Vec<f64>,
}

struct PointStencils {
    stencils: Vec<DirectionalStencil>,
    neighbors: Vec<u32>,
    dist: Vec<f64>,
}

fn candidates(grid: &SphereGrid, center: usize, radius: f64) -> Vec<Candidate> {
    let frame = grid.frame(center);
    cap_neighbors_of(grid, center, radius)
        .into_iter()
        .map(|id| Candidate {
            id,
            coords: normal_coordinates(frame, grid.point(id)),
        })
        .collect()
}

fn build_point(grid: &SphereGrid, center: usize, dirs: &DirectionSet) -> Result<PointStencils> {
    let h = grid.h();
    let near = candidates(grid, center, h.sqrt());
    let mut wide = || candidates(grid, center, 2.0 * h.sqrt());
    let angles = (0..dirs.len()).map(|k| dirs.angle(k)).chain(COORDINATE_ANGLES);
    let mut stencils = Vec::with_capacity(dirs.len() + 2);
    for angle in angles {
        stencils.push(build_stencil(center, angle, &near, &mut wide, h, dirs.dtheta())?);
    }
    let mut neighbors: Vec<u32> = stencils.iter().flat_map(|s| s.neighbors).collect();
    neighbors.sort_unstable();
    neighbors.dedup();
    if neighbors.len() > u16::MAX as usize {
        return Err(Error::Stencil {
            point: center,
            direction: 0.0,
            reason: "too many distinct neighbors".into(),
        });
    }
    for s in &mut stencils {
        for (slot, id) in s.local.iter_mut().zip(s.neighbors) {
            *slot = neighbors.binary_search(&id).expect("neighbor present") as u16;
        }
    }
    let x0 = grid.point(center);
    let dist = neighbors.iter().map(|&j| arc(x0, grid.point(j as usize))).collect();
    Ok(PointStencils {
        stencils,
        neighbors,
        dist,
    })
}

impl StencilTable {
    /// Builds every stencil of `grid`, in parallel over points. Failures are
    /// collected and reported together.
    pub fn build(grid: &SphereGrid) -> Result<Self> {
        let directions = direction_set(grid.h())?;
        let results: Vec<Result<PointStencils>> = (0..grid.len())
            .into_par_iter()
            .map(|i| build_point(grid, i, &directions))
            .collect();

        let mut failures = results.iter().enumerate().filter(|(_, r)| r.is_err());
        if let Some((first_point, _)) = failures.next() {
            let count = 1 + failures.count();
            let first = results.into_iter().nth(first_point).unwrap().err().unwrap();
            return Err(Error::PointFailures {
                count,
                first_point,
                first: Box::new(first),
            });
        }

        let per_point = directions.len() + 2;
        let mut table = StencilTable {
            h: grid.h(),
            directions,
            grid_hash: grid.content_hash(),
            stencils: Vec::with_capacity(grid.len() * per_point),
            offsets: Vec::with_capacity(grid.len() + 1),
            neighbor_ids: Vec::new(),
            neighbor_dist: Vec::new(),
        };
        table.offsets.push(0);
        for r in results {
            let p = r.unwrap();
            table.stencils.extend(p.stencils);
            table.neighbor_ids.extend(p.neighbors);
            table.neighbor_dist.extend(p.dist);
            table.offsets.push(table.neighbor_ids.len() as u32);
        }
        let relaxed = table.relaxed_count();
        if relaxed > 0 {
            log::info!(
                "{relaxed} of {} stencils needed relaxed neighbor selection",
                table.stencils.len()
            );
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    /// Content hash of the grid the table was built for.
    pub fn grid_hash(&self) -> &[u8; 32] {
        &self.grid_hash
    }

    /// Stencils per point: `2M + 2`.
    pub fn per_point(&self) -> usize {
        self.directions.len() + 2
    }

    /// All stencils of point `i`.
    #[inline]
    pub fn point_stencils(&self, i: usize) -> &[DirectionalStencil] {
        let n = self.per_point();
        &self.stencils[i * n..(i + 1) * n]
    }

    /// Directional stencil `k` (angle `(k+1)·dθ`) at point `i`.
    #[inline]
    pub fn directional(&self, i: usize, k: usize) -> &DirectionalStencil {
        &self.point_stencils(i)[k]
    }

    /// Coordinate stencil at point `i`: `axis` 0 is `(1,0)`, 1 is `(0,1)`.
    #[inline]
    pub fn coordinate(&self, i: usize, axis: usize) -> &DirectionalStencil {
        &self.point_stencils(i)[self.directions.len() + axis]
    }

    /// Distinct neighbor ids used by the stencils of point `i`, sorted.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbor_ids[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    /// Geodesic distances matching [`neighbors`](Self::neighbors).
    #[inline]
    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.neighbor_dist[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn stencils(&self) -> &[DirectionalStencil] {
        &self.stencils
    }

    pub fn relaxed_count(&self) -> usize {
        self.stencils
            .iter()
            .filter(|s| s.relaxation != Relaxation::None)
            .count()
    }

    /// Discrete gradient `(D_(1,0) u, D_(0,1) u)` at point `i` in its frame.
    #[inline]
    pub fn gradient(&self, i: usize, u: &[f64]) -> [f64; 2] {
        [
            super::apply_first_derivative(self.coordinate(i, 0), u),
            super::apply_first_derivative(self.coordinate(i, 1), u),
        ]
    }

    /// Discrete Laplace-Beltrami operator at point `i`.
    #[inline]
    pub fn laplacian(&self, i: usize, u: &[f64]) -> f64 {
        super::discrete_laplacian(self.coordinate(i, 0), self.coordinate(i, 1), u)
    }

    /// Largest difference quotient `|v_i − v_j| / d(x_i, x_j)` over all
    /// stencil edges: a discrete Lipschitz constant of `v`.
    pub fn edge_lipschitz(&self, v: &[f64]) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.neighbors(i)
                    .iter()
                    .zip(self.neighbor_distances(i))
                    .map(|(&j, d)| (v[i] - v[j as usize]).abs() / d)
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Checks that the table matches `grid`.
    pub fn check_grid(&self, grid: &SphereGrid) -> Result<()> {
        if self.len() != grid.len() || self.grid_hash != grid.content_hash() {
            return Err(Error::Cache("stencil table was built for a different grid".into()));
        }
        Ok(())
    }
}
