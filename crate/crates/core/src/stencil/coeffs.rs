use crate::{Error, Result};

/// Polar coordinates `(r, θ)` of a projected neighbor, with θ measured from
/// the stencil direction ν in the rotated frame `(ν, ν⊥)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polar {
    pub r: f64,
    pub theta: f64,
}

/// Finite-difference weights of a four-point directional stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    /// Second-derivative weights.
    pub a: [f64; 4],
    /// First-derivative weights.
    pub b: [f64; 4],
    pub det: f64,
}

/// Closed-form weights for neighbors ordered by quadrant Q1..Q4.
///
/// The weights make `Σ a_j (u_j - u_0)` exact for `u_νν` and
/// `Σ b_j (u_j - u_0)` exact for `u_ν` on `{1, X, Y, X²}` (X along ν),
/// with the extra condition that the ν⊥ moments of the pair {1, 4} cancel.
pub fn fd_coefficients(polar: &[Polar; 4]) -> Result<Coefficients> {
    let [r1, r2, r3, r4] = polar.map(|p| p.r);
    let [(s1, c1), (s2, c2), (s3, c3), (s4, c4)] = polar.map(|p| p.theta.sin_cos());

    let p = c3 * s2 - c2 * s3;
    let q = c1 * s4 - c4 * s1;
    let det = p * (r1 * c1 * c1 * s4 - r4 * c4 * c4 * s1) - q * (r3 * c3 * c3 * s2 - r2 * c2 * c2 * s3);

    let rmax = r1.max(r2).max(r3).max(r4);
    let guard = 1e-14 * rmax.powi(4);
    if !det.is_finite() || det.abs() <= guard {
        return Err(Error::DegenerateStencil { det, guard });
    }

    let k1 = r2 * s3 * c2 * c2 - r3 * s2 * c3 * c3;
    let k2 = r1 * s4 * c1 * c1 - r4 * s1 * c4 * c4;

    let a = [
        2.0 * s4 * p / (r1 * det),
        2.0 * s3 * q / (r2 * det),
        -2.0 * s2 * q / (r3 * det),
        -2.0 * s1 * p / (r4 * det),
    ];
    let b = [
        s4 * k1 / (r1 * det),
        -s3 * k2 / (r2 * det),
        s2 * k2 / (r3 * det),
        -s1 * k1 / (r4 * det),
    ];
    Ok(Coefficients { a, b, det })
}
