//! Point sets on the unit sphere.
//!
//! A [`SphereGrid`] owns the points, a fixed tangent frame per point, the
//! spherical Voronoi cell areas used as quadrature weights, the spacing `h`
//! (covering radius of the point set) and a spatial index for geodesic cap
//! queries.

mod io;
mod voronoi;

use std::f64::consts::PI;
use std::fmt;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use sha2::{Digest, Sha256};

use crate::{Error, Result, Vec3};

pub use io::{parse_grid_file, read_grid_file, write_grid_file};
pub use voronoi::{voronoi_areas, VoronoiCells};

/// Tolerance on |x| - 1 accepted by the checked geodesic helpers.
pub const UNIT_TOLERANCE: f64 = 1e-9;

const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Orthonormal basis of the tangent plane at `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl TangentFrame {
    /// Deterministic frame at `x0`: `e1` is the projection of a fixed
    /// reference axis, `e2 = x0 × e1`.
    pub fn at(x0: &Vec3) -> Self {
        let reference = if x0.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let e1 = (reference - x0 * x0.dot(&reference)).normalize();
        let e2 = x0.cross(&e1);
        TangentFrame {
            origin: *x0,
            e1,
            e2,
        }
    }

    /// The same plane with the basis turned by `angle` about the normal.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        TangentFrame {
            origin: self.origin,
            e1: self.e1 * c + self.e2 * s,
            e2: -self.e1 * s + self.e2 * c,
        }
    }

    /// Coordinates of an ambient vector in the `(e1, e2)` basis.
    #[inline]
    pub fn to_local(&self, v: &Vec3) -> [f64; 2] {
        [v.dot(&self.e1), v.dot(&self.e2)]
    }

    /// Ambient tangent vector with coordinates `p` in the `(e1, e2)` basis.
    #[inline]
    pub fn to_ambient(&self, p: [f64; 2]) -> Vec3 {
        self.e1 * p[0] + self.e2 * p[1]
    }
}

fn check_unit(x: &Vec3, what: &str) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Domain(format!(
            "{what} is not a unit vector (norm {norm})"
        )));
    }
    Ok(())
}

/// Great-circle distance between unit vectors, in `[0, π]`.
pub fn geodesic_distance(x: &Vec3, y: &Vec3) -> Result<f64> {
    check_unit(x, "x")?;
    check_unit(y, "y")?;
    Ok(arc(x, y))
}

/// Unchecked great-circle distance; `atan2` keeps it accurate near 0 and π.
#[inline]
pub(crate) fn arc(x: &Vec3, y: &Vec3) -> f64 {
    x.cross(y).norm().atan2(x.dot(y))
}

/// Projection of `x` onto the tangent plane at `x0` in geodesic normal
/// coordinates: the result `z` satisfies `(z - x0)·x0 = 0` and
/// `|z - x0| = d(x0, x)`.
pub fn project_to_tangent(x0: &Vec3, x: &Vec3) -> Result<Vec3> {
    check_unit(x0, "x0")?;
    check_unit(x, "x")?;
    let t = arc(x0, x);
    if t > PI - 1e-6 {
        return Err(Error::Domain(format!(
            "point is antipodal to the projection origin (distance {t})"
        )));
    }
    Ok(project_unchecked(x0, x, t))
}

#[inline]
pub(crate) fn project_unchecked(x0: &Vec3, x: &Vec3, t: f64) -> Vec3 {
    // 1 - t cot t and t csc t, with their series near t = 0.
    let (one_minus_tcot, tcsc) = if t < 1e-5 {
        let t2 = t * t;
        (t2 / 3.0 + t2 * t2 / 45.0, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    } else {
        let (s, c) = t.sin_cos();
        (1.0 - t * c / s, t / s)
    };
    x0 * one_minus_tcot + x * tcsc
}

/// Normal coordinates of `x` in `frame`: `Proj(x; x0) - x0` in `(e1, e2)`.
#[inline]
pub(crate) fn normal_coordinates(frame: &TangentFrame, x: &Vec3) -> [f64; 2] {
    let t = arc(&frame.origin, x);
    let z = project_unchecked(&frame.origin, x, t);
    frame.to_local(&(z - frame.origin))
}

/// Geodesic radius to squared chord length.
#[inline]
fn chord2(radius: f64) -> f64 {
    if radius >= PI {
        4.0 + 1e-9
    } else {
        let s = (0.5 * radius).sin();
        4.0 * s * s
    }
}

/// k-d tree over the ambient coordinates; chord distance is monotone in
/// geodesic distance so caps become Euclidean balls.
pub struct SpatialIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl fmt::Debug for SpatialIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialIndex").finish_non_exhaustive()
    }
}

impl SpatialIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&coords)
            .map_err(|e| Error::Geometry(format!("spatial index construction failed: {e:?}")))?;
        Ok(SpatialIndex { tree })
    }

    /// Ids with chord² distance to `q` at most `c2`, paired with that distance.
    pub fn within_chord2(&self, q: &Vec3, c2: f64) -> Vec<(usize, f64)> {
        self.tree
            .query(&[q.x, q.y, q.z])
            .within::<SquaredEuclidean<f64>>(c2)
            .unsorted()
            .execute()
            .into_iter()
            .map(|item| (item.item as usize, item.distance))
            .collect()
    }

    pub fn nearest(&self, q: &Vec3) -> usize {
        self.tree
            .query(&[q.x, q.y, q.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute()
            .item as usize
    }
}

/// Discretization of S².
#[derive(Debug)]
pub struct SphereGrid {
    points: Vec<Vec3>,
    frames: Vec<TangentFrame>,
    areas: Vec<f64>,
    h: f64,
    index: SpatialIndex,
}

impl SphereGrid {
    /// Builds a grid from unit vectors. Points within 1e-6 of unit norm are
    /// renormalized; anything else is rejected.
    pub fn from_points(mut points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Config(format!(
                "a grid needs at least 4 points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter_mut().enumerate() {
            let norm = p.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "point {i} is not a unit vector (norm {norm})"
                )));
            }
            *p /= norm;
        }
        let index = SpatialIndex::new(&points)?;
        let cells = voronoi_areas(&points, &index)?;
        let frames = points.iter().map(TangentFrame::at).collect();
        Ok(SphereGrid {
            h: cells.covering_radius(),
            areas: cells.areas,
            points,
            frames,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, id: usize) -> &Vec3 {
        &self.points[id]
    }

    pub fn frames(&self) -> &[TangentFrame] {
        &self.frames
    }

    pub fn frame(&self, id: usize) -> &TangentFrame {
        &self.frames[id]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Covering radius: every point of S² is within `h` of a grid point.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Replaces the per-point tangent frames by random rotations of the
    /// default ones (reproducible for a given seed).
    pub fn rotate_frames(&mut self, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for frame in &mut self.frames {
            *frame = frame.rotated(rng.gen_range(0.0..2.0 * PI));
        }
    }

    /// Nearest grid point to an arbitrary unit vector.
    pub fn nearest(&self, q: &Vec3) -> usize {
        self.index.nearest(q)
    }

    /// Stable hash of points and frames, used to key stencil caches.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.points.len() as u64).to_le_bytes());
        for (p, f) in self.points.iter().zip(&self.frames) {
            for v in [p, &f.e1, &f.e2] {
                for c in v.iter() {
                    hasher.update(c.to_bits().to_le_bytes());
                }
            }
        }
        hasher.finalize().into()
    }
}

/// Fibonacci spiral lattice with `n` points.
pub fn fibonacci_points(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let phi = 2.0 * PI * (i as f64 / GOLDEN_RATIO).fract();
            let s = (1.0 - z * z).max(0.0).sqrt();
            Vec3::new(s * phi.cos(), s * phi.sin(), z)
        })
        .collect()
}

/// Quasi-uniform grid of `n` points on the Fibonacci spiral.
pub fn generate_fibonacci(n: usize) -> Result<SphereGrid> {
    if n < 100 {
        return Err(Error::Config(format!(
            "Fibonacci grid needs at least 100 points, got {n}"
        )));
    }
    SphereGrid::from_points(fibonacci_points(n))
}

/// Grid points within geodesic distance `radius` of `x0`, excluding points
/// that coincide with `x0`. Ids come back sorted.
pub fn cap_neighbors(grid: &SphereGrid, x0: &Vec3, radius: f64) -> Vec<usize> {
    let mut ids: Vec<usize> = grid
        .index
        .within_chord2(x0, chord2(radius) * (1.0 + 1e-12))
        .into_iter()
        .filter(|&(id, _)| {
            let d = arc(x0, &grid.points[id]);
            d > 1e-14 && d <= radius
        })
        .map(|(id, _)| id)
        .collect();
    ids.sort_unstable();
    ids
}

/// Cap around grid point `center`, excluding `center` itself.
pub fn cap_neighbors_of(grid: &SphereGrid, center: usize, radius: f64) -> Vec<usize> {
    let x0 = grid.points[center];
    let mut ids: Vec<usize> = grid
        .index
        .within_chord2(&x0, chord2(radius) * (1.0 + 1e-12))
        .into_iter()
        .filter(|&(id, _)| id != center && arc(&x0, &grid.points[id]) <= radius)
        .map(|(id, _)| id)
        .collect();
    ids.sort_unstable();
    ids
}

/// Quasi-random covering sample of S² (offset Fibonacci lattice).
fn covering_sample(n: usize) -> impl Iterator<Item = Vec3> {
    let offset = 0.5 * (5.0f64.sqrt() - 1.0);
    (0..n).map(move |i| {
        let z = 1.0 - (2.0 * i as f64 + 1.0 + offset) / (n as f64 + 1.0);
        let phi = 2.0 * PI * ((i as f64 + offset) / GOLDEN_RATIO).fract();
        let s = (1.0 - z * z).max(0.0).sqrt();
        Vec3::new(s * phi.cos(), s * phi.sin(), z)
    })
}

/// Sampling estimate of `sup_q min_y d(q, y)` for an arbitrary point set.
///
/// The sample holds a quasi-random covering of at least `10·N` directions
/// plus the antipode of every point.
pub fn estimate_h_points(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return PI;
    }
    let nearest = |q: &Vec3| {
        points
            .iter()
            .map(|p| arc(q, p))
            .fold(f64::INFINITY, f64::min)
    };
    let sample_size = (10 * points.len()).max(20_000);
    let sampled = covering_sample(sample_size)
        .map(|q| nearest(&q))
        .fold(0.0, f64::max);
    let antipodal = points
        .iter()
        .map(|p| nearest(&(-p)))
        .fold(0.0, f64::max);
    sampled.max(antipodal)
}

/// Spacing of a grid: the larger of the exact Voronoi-vertex covering radius
/// and a `10·N` quasi-random sample maximum.
pub fn estimate_h(grid: &SphereGrid) -> f64 {
    let sample = covering_sample(10 * grid.len())
        .map(|q| arc(&q, &grid.points[grid.nearest(&q)]))
        .fold(0.0, f64::max);
    sample.max(grid.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn geodesic_distance_cases() {
        let (e1, e2) = (Vec3::x(), Vec3::y());
        assert_eq!(geodesic_distance(&e1, &e1).unwrap(), 0.0);
        assert_abs_diff_eq!(geodesic_distance(&e1, &-e1).unwrap(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(geodesic_distance(&e1, &e2).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert!(matches!(
            geodesic_distance(&(e1 * 1.001), &e2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn geodesic_distance_is_a_metric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (a, b, c) = (random_unit(&mut rng), random_unit(&mut rng), random_unit(&mut rng));
            let ab = geodesic_distance(&a, &b).unwrap();
            assert_eq!(ab, geodesic_distance(&b, &a).unwrap());
            let bc = geodesic_distance(&b, &c).unwrap();
            let ac = geodesic_distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let x0 = Vec3::z();
        assert_abs_diff_eq!(project_to_tangent(&x0, &x0).unwrap(), x0, epsilon = 1e-15);
        let x = Vec3::new(0.3f64.sin(), 0.0, 0.3f64.cos());
        let z = project_to_tangent(&x0, &x).unwrap();
        assert_abs_diff_eq!(z, Vec3::new(0.3, 0.0, 1.0), epsilon = 1e-12);
        assert!(matches!(project_to_tangent(&x0, &-x0), Err(Error::Domain(_))));
    }

    #[test]
    fn projection_series_matches_closed_form_near_threshold() {
        let x0 = Vec3::z();
        for t in [9.9e-6f64, 1.01e-5] {
            let x = Vec3::new(t.sin(), 0.0, t.cos());
            let z = project_to_tangent(&x0, &x).unwrap();
            assert_abs_diff_eq!((z - x0).norm(), t, epsilon = 1e-15);
        }
    }

    #[test]
    fn projection_isometry_at_origin() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let radius: f64 = 0.25;
        for _ in 0..10_000 {
            let x0 = random_unit(&mut rng);
            let frame = TangentFrame::at(&x0);
            let t = rng.gen_range(0.0..radius);
            let phi = rng.gen_range(0.0..2.0 * PI);
            let v = frame.to_ambient([phi.cos(), phi.sin()]);
            let x = (x0 * t.cos() + v * t.sin()).normalize();
            let d = geodesic_distance(&x0, &x).unwrap();
            let z = project_to_tangent(&x0, &x).unwrap();
            assert!(((z - x0).norm() - d).abs() < 1e-10);
            assert!((z - x0).dot(&x0).abs() < 1e-10);
        }
    }

    #[test]
    fn frames_are_orthonormal() {
        let grid = generate_fibonacci(500).unwrap();
        for f in grid.frames() {
            assert!(f.e1.dot(&f.e2).abs() < 1e-12);
            assert!(f.e1.dot(&f.origin).abs() < 1e-12);
            assert!(f.e2.dot(&f.origin).abs() < 1e-12);
            assert!((f.e1.norm() - 1.0).abs() < 1e-12);
            assert!((f.e2.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fibonacci_rejects_small_n() {
        assert!(matches!(generate_fibonacci(99), Err(Error::Config(_))));
    }

    #[test]
    fn fibonacci_grid_invariants() {
        for n in [100, 1000, 5000] {
            let grid = generate_fibonacci(n).unwrap();
            for p in grid.points() {
                assert!((p.norm() - 1.0).abs() < 1e-12);
            }
            let total: f64 = grid.areas().iter().sum();
            assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-6);
            assert!(grid.h().is_finite() && grid.h() > 0.0);
        }
    }

    #[test]
    fn spacing_scales_like_inverse_sqrt_n() {
        let h1 = generate_fibonacci(2000).unwrap().h();
        let h4 = generate_fibonacci(8000).unwrap().h();
        let ratio = h4 / h1;
        assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn estimate_h_small_sets() {
        assert_abs_diff_eq!(estimate_h_points(&[Vec3::z()]), PI, epsilon = 1e-12);
        let h = estimate_h_points(&[Vec3::z(), -Vec3::z()]);
        assert!((h - PI / 2.0).abs() < 0.01 * PI / 2.0, "h = {h}");
        assert!(h <= PI / 2.0 + 1e-12);
    }

    #[test]
    fn covering_holds_for_random_queries() {
        let grid = generate_fibonacci(3000).unwrap();
        let h = estimate_h(&grid);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let q = random_unit(&mut rng);
            let d = arc(&q, grid.point(grid.nearest(&q)));
            assert!(d <= h + 1e-12, "d = {d}, h = {h}");
        }
    }

    #[test]
    fn cap_neighbor_counts() {
        let grid = generate_fibonacci(2000).unwrap();
        let x0 = *grid.point(17);
        let nearest = cap_neighbors(&grid, &x0, PI)
            .iter()
            .map(|&id| arc(&x0, grid.point(id)))
            .fold(f64::INFINITY, f64::min);
        assert!(cap_neighbors(&grid, &x0, nearest * (1.0 - 1e-9)).is_empty());
        assert_eq!(cap_neighbors(&grid, &x0, PI).len(), grid.len() - 1);
        assert_eq!(cap_neighbors_of(&grid, 17, PI).len(), grid.len() - 1);
    }

    #[test]
    fn cap_of_radius_sqrt_h_has_expected_size() {
        let grid = generate_fibonacci(20_000).unwrap();
        let radius = grid.h().sqrt();
        let expected = grid.len() as f64 * (1.0 - radius.cos()) / 2.0;
        for id in [0, 5000, 10_000, 19_999] {
            let count = cap_neighbors_of(&grid, id, radius).len() as f64;
            assert!(count > expected / 2.0 && count < expected * 2.0, "{count} vs {expected}");
        }
    }

    #[test]
    fn cap_query_matches_brute_force() {
        let grid = generate_fibonacci(1500).unwrap();
        for (id, radius) in [(3, 0.2), (700, 0.5), (1499, 1.3)] {
            let x0 = *grid.point(id);
            let brute: Vec<usize> = (0..grid.len())
                .filter(|&j| j != id && arc(&x0, grid.point(j)) <= radius)
                .collect();
            assert_eq!(cap_neighbors_of(&grid, id, radius), brute);
        }
    }
}
