use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::{normalize, Density};
use crate::sphere_grid::SphereGrid;
use crate::{Error, Result, Vec3};

/// Closed-form intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    Uniform,
    /// Donut-shaped source on `0 ≤ z ≤ √2/2`.
    DonutF1,
    /// Mirror image of [`Builtin::DonutF1`] on `−√2/2 ≤ z ≤ 0`.
    DonutF2,
    /// Indicator of the geodesic triangle with vertices at polar angle `theta`.
    Triangle { theta: f64 },
    /// `tanh(a z)` on the northern hemisphere.
    HemisphereTanh { a: f64 },
}

fn donut(x: &Vec3) -> f64 {
    let z = x.z;
    if !(0.0..=FRAC_1_SQRT_2).contains(&z) {
        return 0.0;
    }
    let s = x.x.hypot(x.y);
    let c = 1.0 / ((4.0 * PI / 15.0) * (SQRT_2 + 2.0));
    (c * (-4.0 * s * z.powi(3) + 4.0 * s.powi(3) * z)).max(0.0)
}

/// Vertices `t_j = (sin θ cos(2πj/3), sin θ sin(2πj/3), cos θ)`.
pub fn triangle_vertices(theta: f64) -> [Vec3; 3] {
    [0usize, 1, 2].map(|j| {
        let phi = 2.0 * PI * j as f64 / 3.0;
        Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    })
}

/// Membership in the geodesic triangle: `x·(t_j × t_{j+1}) ≤ 0` for all
/// three edges, indices cyclic.
pub fn in_triangle(theta: f64, x: &Vec3) -> bool {
    let t = triangle_vertices(theta);
    (0..3).all(|j| x.dot(&t[j].cross(&t[(j + 1) % 3])) <= 1e-12)
}

/// Spherical excess of the triangle.
pub fn triangle_area(theta: f64) -> f64 {
    let [a, b, c] = triangle_vertices(theta);
    let triple = a.dot(&b.cross(&c)).abs();
    2.0 * triple.atan2(1.0 + a.dot(&b) + b.dot(&c) + c.dot(&a))
}

impl Builtin {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Builtin::Triangle { theta } if !(PI / 2.0..PI).contains(&theta) => Err(Error::Config(
                format!("triangle theta must lie in [pi/2, pi), got {theta}"),
            )),
            Builtin::HemisphereTanh { a } if !(a > 0.0 && a.is_finite()) => Err(Error::Config(
                format!("hemisphere_tanh needs a > 0, got {a}"),
            )),
            _ => Ok(()),
        }
    }

    /// Unnormalized value at a unit vector.
    pub fn eval(&self, x: &Vec3) -> f64 {
        match *self {
            Builtin::Uniform => 1.0 / (4.0 * PI),
            Builtin::DonutF1 => donut(x),
            Builtin::DonutF2 => donut(&Vec3::new(x.x, x.y, -x.z)),
            Builtin::Triangle { theta } => {
                if in_triangle(theta, x) {
                    1.0 / triangle_area(theta)
                } else {
                    0.0
                }
            }
            Builtin::HemisphereTanh { a } => {
                if x.z >= 0.0 {
                    2.0 * PI * a.cosh().ln() / a * (a * x.z).tanh()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Pointwise evaluation on the grid followed by normalization.
pub fn builtin(which: &Builtin, grid: &SphereGrid) -> Result<Density> {
    which.validate()?;
    let values = grid.points().iter().map(|x| which.eval(x)).collect();
    normalize(&Density::new(values)?, grid.areas())
}
