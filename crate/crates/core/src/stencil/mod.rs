//! Wide four-point stencils on the tangent planes of a [`SphereGrid`](crate::sphere_grid::SphereGrid).
//!
//! For a grid point `x0` and a tangent direction `ν`, nearby grid points are
//! mapped to geodesic normal coordinates at `x0`, expressed in polar form
//! `(r, θ)` relative to `ν`, and one point is chosen in each quadrant. The
//! resulting weights approximate `u_νν` and `u_ν` with positive second
//! derivative weights, which is what makes the scheme monotone.

mod cache;
mod coeffs;
mod table;

use std::f64::consts::FRAC_PI_2;

pub use cache::{decode_table, encode_table, load_table, save_table, CACHE_VERSION};
pub use coeffs::{fd_coefficients, Coefficients, Polar};
pub use table::StencilTable;

use crate::{Error, Result};

/// Uniform set of tangent directions `θ_k = k·dθ`, `k = 1..2M`, where
/// `M = π/(2 dθ)`; direction `k` pairs with its perpendicular `k + M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionSet {
    dtheta: f64,
    pairs: usize,
}

impl DirectionSet {
    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    /// Number of orthogonal pairs `M`.
    pub fn pair_count(&self) -> usize {
        self.pairs
    }

    /// Number of directions, `2M`.
    pub fn len(&self) -> usize {
        2 * self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs == 0
    }

    /// Angle of direction `k` (0-based) from `e1`, namely `(k + 1)·dθ`.
    pub fn angle(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dtheta
    }

    /// The pairs `(ν, ν⊥)` as frame coordinates.
    pub fn pairs(&self) -> Vec<([f64; 2], [f64; 2])> {
        (0..self.pairs)
            .map(|k| {
                let (s, c) = self.angle(k).sin_cos();
                ([c, s], [-s, c])
            })
            .collect()
    }
}

/// Direction set for grid spacing `h`: `dθ = π/(2⌊π/(2√h)⌋)`.
pub fn direction_set(h: f64) -> Result<DirectionSet> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Resolution(format!("grid spacing must be positive, got {h}")));
    }
    // The offset keeps exact quotients such as π/(2·π/4) = 2 from rounding down.
    let pairs = (FRAC_PI_2 / h.sqrt() + 1e-9).floor();
    if pairs < 1.0 {
        return Err(Error::Resolution(format!(
            "h = {h} is too coarse for a single direction pair"
        )));
    }
    Ok(DirectionSet {
        dtheta: FRAC_PI_2 / pairs,
        pairs: pairs as usize,
    })
}

/// Which constraints were relaxed to build a stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Relaxation {
    /// All constraints hold.
    None = 0,
    /// The `r ≥ √h − 2h` floor was dropped.
    RadiusFloor = 1,
    /// Both the radius and the `|sin θ| ≥ dθ` floors were dropped.
    BothFloors = 2,
    /// Candidates came from the cap of radius `2√h`, radius floor dropped.
    WideCap = 3,
    /// Wide cap with both floors dropped.
    WideCapNoFloors = 4,
}

impl Relaxation {
    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Relaxation::None,
            1 => Relaxation::RadiusFloor,
            2 => Relaxation::BothFloors,
            3 => Relaxation::WideCap,
            4 => Relaxation::WideCapNoFloors,
            _ => return None,
        })
    }
}

/// A projected neighbor: grid id and normal coordinates in the frame at the
/// stencil center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub coords: [f64; 2],
}

/// Constraints applied by [`select_neighbors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRules {
    pub dtheta: f64,
    /// Minimum radius, or `None` to disable.
    pub r_floor: Option<f64>,
    /// Enforce `|sin θ| ≥ dθ`.
    pub angle_floor: bool,
}

impl SelectionRules {
    /// The unrelaxed rules for spacing `h`.
    pub fn strict(h: f64, dtheta: f64) -> Self {
        SelectionRules {
            dtheta,
            r_floor: Some(h.sqrt() - 2.0 * h),
            angle_floor: true,
        }
    }
}

/// One chosen neighbor with its polar coordinates relative to `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selected {
    pub id: usize,
    pub polar: Polar,
}

/// Quadrant index 0..4 for Q1..Q4: `cos θ ≥ 0` in Q1 and Q4, `sin θ ≥ 0` in
/// Q1 and Q2.
fn quadrant(theta: f64) -> usize {
    let (s, c) = theta.sin_cos();
    match (c >= 0.0, s >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

/// Picks one neighbor per quadrant around direction `nu_angle` (radians from
/// `e1`): the one closest to the `ν` axis in `|sin θ|` among those meeting
/// `rules`, ties broken by smaller `r` then smaller id.
pub fn select_neighbors(
    center: usize,
    nu_angle: f64,
    candidates: &[Candidate],
    rules: &SelectionRules,
) -> Result<[Selected; 4]> {
    let mut best: [Option<(f64, Selected)>; 4] = [None; 4];
    for cand in candidates {
        let [x, y] = cand.coords;
        let r = x.hypot(y);
        if r == 0.0 {
            continue;
        }
        if let Some(floor) = rules.r_floor {
            if r < floor {
                continue;
            }
        }
        let theta = y.atan2(x) - nu_angle;
        let key = theta.sin().abs();
        if rules.angle_floor && key < rules.dtheta * (1.0 - 1e-12) {
            continue;
        }
        let q = quadrant(theta);
        let sel = Selected {
            id: cand.id,
            polar: Polar { r, theta },
        };
        let better = match &best[q] {
            None => true,
            Some((k, cur)) => key
                .total_cmp(k)
                .then(r.total_cmp(&cur.polar.r))
                .then(cand.id.cmp(&cur.id))
                .is_lt(),
        };
        if better {
            best[q] = Some((key, sel));
        }
    }
    let mut out = [Selected {
        id: 0,
        polar: Polar { r: 0.0, theta: 0.0 },
    }; 4];
    for (q, slot) in best.iter().enumerate() {
        match slot {
            Some((_, sel)) => out[q] = *sel,
            None => {
                return Err(Error::Stencil {
                    point: center,
                    direction: nu_angle,
                    reason: format!("quadrant Q{} has no admissible neighbor", q + 1),
                })
            }
        }
    }
    Ok(out)
}

/// A four-point stencil for one grid point and one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalStencil {
    pub center: u32,
    /// Neighbor ids for Q1..Q4.
    pub neighbors: [u32; 4],
    /// Positions of the neighbors in the center's unique-neighbor list of
    /// the owning [`StencilTable`].
    pub local: [u16; 4],
    pub polar: [Polar; 4],
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub det: f64,
    pub relaxation: Relaxation,
}

/// Selects neighbors and computes weights, climbing the relaxation ladder
/// until a stencil with nonzero determinant and positive `a` is found.
/// `wide` supplies the `2√h` cap candidates on demand.
pub(crate) fn build_stencil(
    center: usize,
    nu_angle: f64,
    near: &[Candidate],
    wide: &mut dyn FnMut() -> Vec<Candidate>,
    h: f64,
    dtheta: f64,
) -> Result<DirectionalStencil> {
    let strict = SelectionRules::strict(h, dtheta);
    let no_r = SelectionRules {
        r_floor: None,
        ..strict
    };
    let none = SelectionRules {
        angle_floor: false,
        ..no_r
    };
    let ladder = [
        (Relaxation::None, strict, false),
        (Relaxation::RadiusFloor, no_r, false),
        (Relaxation::BothFloors, none, false),
        (Relaxation::WideCap, no_r, true),
        (Relaxation::WideCapNoFloors, none, true),
    ];
    let mut wide_cache: Option<Vec<Candidate>> = None;
    let mut last_reason = String::new();
    for (relaxation, rules, use_wide) in ladder {
        let cands: &[Candidate] = if use_wide {
            wide_cache.get_or_insert_with(|| wide())
        } else {
            near
        };
        let selected = match select_neighbors(center, nu_angle, cands, &rules) {
            Ok(s) => s,
            Err(e) => {
                last_reason = e.to_string();
                continue;
            }
        };
        let polar = selected.map(|s| s.polar);
        match fd_coefficients(&polar) {
            Ok(c) if c.a.iter().all(|&a| a > 0.0 && a.is_finite()) => {
                if relaxation != Relaxation::None {
                    log::debug!(
                        "stencil at point {center}, angle {nu_angle:.4}: relaxed to {relaxation:?}"
                    );
                }
                return Ok(DirectionalStencil {
                    center: center as u32,
                    neighbors: selected.map(|s| s.id as u32),
                    local: [0; 4],
                    polar,
                    a: c.a,
                    b: c.b,
                    det: c.det,
                    relaxation,
                });
            }
            Ok(_) => last_reason = "non-positive second-derivative weight".into(),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::Stencil {
        point: center,
        direction: nu_angle,
        reason: format!("relaxation ladder exhausted ({last_reason})"),
    })
}

/// `Σ a_j (u(x_j) − u(x0))`.
#[inline]
pub fn apply_second_derivative(stencil: &DirectionalStencil, u: &[f64]) -> f64 {
    let u0 = u[stencil.center as usize];
    stencil
        .a
        .iter()
        .zip(&stencil.neighbors)
        .map(|(a, &j)| a * (u[j as usize] - u0))
        .sum()
}

/// `Σ b_j (u(x_j) − u(x0))`.
#[inline]
pub fn apply_first_derivative(stencil: &DirectionalStencil, u: &[f64]) -> f64 {
    let u0 = u[stencil.center as usize];
    stencil
        .b
        .iter()
        .zip(&stencil.neighbors)
        .map(|(b, &j)| b * (u[j as usize] - u0))
        .sum()
}

/// Laplace-Beltrami operator from the two coordinate-direction stencils.
#[inline]
pub fn discrete_laplacian(s10: &DirectionalStencil, s01: &DirectionalStencil, u: &[f64]) -> f64 {
    apply_second_derivative(s10, u) + apply_second_derivative(s01, u)
}

/// Angles of the two coordinate directions `(1,0)` and `(0,1)`.
pub(crate) const COORDINATE_ANGLES: [f64; 2] = [0.0, FRAC_PI_2];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn direction_set_examples() {
        let d = direction_set(0.01).unwrap();
        assert_eq!(d.pair_count(), 15);
        assert_abs_diff_eq!(d.dtheta(), PI / 30.0, epsilon = 1e-15);
        let d = direction_set((PI / 4.0).powi(2)).unwrap();
        assert_eq!(d.pair_count(), 2);
        assert_abs_diff_eq!(d.dtheta(), PI / 4.0, epsilon = 1e-15);
        for (nu, perp) in direction_set(0.003).unwrap().pairs() {
            assert!((nu[0] * perp[0] + nu[1] * perp[1]).abs() < 1e-15);
            assert_abs_diff_eq!(nu[0].hypot(nu[1]), 1.0, epsilon = 1e-15);
        }
        assert!(matches!(direction_set(2.5), Err(Error::Resolution(_))));
        assert!(matches!(direction_set(0.0), Err(Error::Resolution(_))));
    }

    #[test]
    fn last_direction_of_each_half_is_axis_aligned() {
        let d = direction_set(0.02).unwrap();
        let m = d.pair_count();
        assert_abs_diff_eq!(d.angle(m - 1), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(d.angle(2 * m - 1), PI, epsilon = 1e-12);
    }

    fn cand(id: usize, r: f64, theta: f64) -> Candidate {
        Candidate {
            id,
            coords: [r * theta.cos(), r * theta.sin()],
        }
    }

    #[test]
    fn picks_unique_feasible_point_per_quadrant() {
        let h: f64 = 0.01;
        let dt = direction_set(h).unwrap().dtheta();
        let r = h.sqrt();
        // The smallest admissible angle is asin(dθ), slightly above dθ.
        let t = dt.asin();
        let cands = [
            cand(7, r, t),
            cand(3, r, PI - t),
            cand(9, r, PI + t),
            cand(1, r, -t),
        ];
        let rules = SelectionRules::strict(h, dt);
        let s = select_neighbors(0, 0.0, &cands, &rules).unwrap();
        assert_eq!(s.map(|s| s.id), [7, 3, 9, 1]);

        // At exactly θ = ±dθ, |sin θ| < dθ and only the ladder admits them.
        let cands = [
            cand(7, r, dt),
            cand(3, r, PI - dt),
            cand(9, r, PI + dt),
            cand(1, r, -dt),
        ];
        assert!(select_neighbors(0, 0.0, &cands, &rules).is_err());
        let s = build_stencil(0, 0.0, &cands, &mut Vec::new, h, dt).unwrap();
        assert_eq!(s.neighbors, [7, 3, 9, 1]);
        assert_eq!(s.relaxation, Relaxation::BothFloors);
    }

    #[test]
    fn tie_breaks_by_radius_then_id() {
        let h: f64 = 0.01;
        let dt = direction_set(h).unwrap().dtheta();
        let r = h.sqrt();
        let others = [cand(20, r, PI - 0.5), cand(21, r, PI + 0.5), cand(22, r, -0.5)];
        let mut cands = vec![cand(5, r, 0.5), cand(4, 0.9 * r, 0.5)];
        cands.extend(others);
        // 0.9√h = 0.09 ≥ √h − 2h = 0.08, so the floor admits it.
        let s = select_neighbors(0, 0.0, &cands, &SelectionRules::strict(h, dt)).unwrap();
        assert_eq!(s[0].id, 4);

        let h: f64 = 0.002;
        let r = h.sqrt();
        let mut cands = vec![cand(5, r, 0.5), cand(4, 0.9 * r, 0.5)];
        cands.extend([cand(20, r, PI - 0.5), cand(21, r, PI + 0.5), cand(22, r, -0.5)]);
        // Here 0.9√h < √h − 2h.
        let s = select_neighbors(0, 0.0, &cands, &SelectionRules::strict(h, dt)).unwrap();
        assert_eq!(s[0].id, 5);

        let mut cands = vec![cand(8, r, 0.5), cand(6, r, 0.5)];
        cands.extend([cand(20, r, PI - 0.5), cand(21, r, PI + 0.5), cand(22, r, -0.5)]);
        let s = select_neighbors(0, 0.0, &cands, &SelectionRules::strict(h, dt)).unwrap();
        assert_eq!(s[0].id, 6);
    }

    #[test]
    fn angle_floor_excludes_near_axis_points() {
        let h: f64 = 0.01;
        let dt = direction_set(h).unwrap().dtheta();
        let r = h.sqrt();
        let cands = [
            cand(1, r, 0.5 * dt),
            cand(2, r, 0.3),
            cand(3, r, PI - 0.3),
            cand(4, r, PI + 0.3),
            cand(5, r, -0.3),
        ];
        let s = select_neighbors(0, 0.0, &cands, &SelectionRules::strict(h, dt)).unwrap();
        assert_eq!(s[0].id, 2);
    }

    #[test]
    fn empty_quadrant_is_a_stencil_error() {
        let cands = [cand(1, 0.1, 0.3), cand(2, 0.1, PI - 0.3), cand(3, 0.1, PI + 0.3)];
        let rules = SelectionRules::strict(0.01, 0.1);
        let err = select_neighbors(11, 0.25, &cands, &rules).unwrap_err();
        match err {
            Error::Stencil { point, direction, .. } => {
                assert_eq!(point, 11);
                assert_eq!(direction, 0.25);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ladder_records_relaxation() {
        let h: f64 = 0.01;
        let dt = direction_set(h).unwrap().dtheta();
        // Q1 only has a candidate inside the radius floor.
        let near = [
            cand(1, 0.02, 0.4),
            cand(2, 0.1, PI - 0.4),
            cand(3, 0.1, PI + 0.4),
            cand(4, 0.1, -0.4),
        ];
        let s = build_stencil(0, 0.0, &near, &mut Vec::new, h, dt).unwrap();
        assert_eq!(s.relaxation, Relaxation::RadiusFloor);
        assert!(s.a.iter().all(|&a| a > 0.0));

        let mut called = false;
        let mut wide = || {
            called = true;
            vec![cand(9, 0.15, 0.4), near[1], near[2], near[3]]
        };
        let s = build_stencil(0, 0.0, &near[1..], &mut wide, h, dt).unwrap();
        assert!(called);
        assert_eq!(s.relaxation, Relaxation::WideCap);
        assert_eq!(s.neighbors[0], 9);
    }
}
