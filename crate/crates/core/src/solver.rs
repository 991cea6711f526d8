//! Damped explicit parabolic iteration `u ← u + k (F^h(u) − √h u)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::ma_operator::OperatorContext;
use crate::stencil::StencilTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Initial step; `None` means `h²`.
    pub k0: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub growth: f64,
    pub shrink: f64,
    /// Include the `−√h u` damping term.
    pub damping: bool,
    /// Use the fixed step `h²/2` with no adaptation or rejection.
    pub fixed_step: bool,
    /// Constant initial value.
    pub u0: f64,
    /// Accepted steps between checks for Lipschitz re-estimation; 0 disables.
    pub refresh_interval: usize,
    /// After each accepted step, add the constant that minimizes the
    /// max-norm of the damped residual. `F^h` is invariant under constants,
    /// so this only speeds up the slow level mode; the fixed point is
    /// unchanged. Ignored with `fixed_step`.
    pub level_shift: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            k0: None,
            tol: 1e-6,
            max_iter: 200_000,
            growth: 1.1,
            shrink: 0.5,
            damping: true,
            fixed_step: false,
            u0: 0.0,
            refresh_interval: 25,
            level_shift: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(k) = self.k0 {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("k0 must be positive, got {k}"));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return bad(format!("growth must exceed 1, got {}", self.growth));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if !self.u0.is_finite() {
            return bad("u0 must be finite".into());
        }
        Ok(())
    }
}

/// One accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub k: f64,
    pub residual: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Iterations performed, counting rejected trial steps.
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// `max |F^h(u) − √h u|` at the returned `u`.
    pub final_residual: f64,
    /// `max |u_{n+1} − u_n| / k` of the last accepted step.
    pub update_residual: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub k_final: f64,
    /// Discrete Lipschitz constant of the returned `u`.
    pub lipschitz: f64,
    pub converged: bool,
    /// Lipschitz re-estimations during the solve.
    pub refreshes: usize,
    pub history: Vec<HistoryRow>,
}

fn damped_residual(f: &[f64], u: &[f64], damping: f64) -> (Vec<f64>, f64) {
    let r: Vec<f64> = f.iter().zip(u).map(|(f, u)| f - damping * u).collect();
    let max = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    (r, max)
}

/// Iterates to steady state from the constant `params.u0`.
pub fn solve(ctx: &mut OperatorContext<'_>, params: &SolverParams) -> Result<(Vec<f64>, SolveReport)> {
    params.validate()?;
    let h = ctx.grid().h();
    let damping = if params.damping { h.sqrt() } else { 0.0 };
    let mut k = if params.fixed_step {
        0.5 * h * h
    } else {
        params.k0.unwrap_or(h * h)
    };
    let n = ctx.grid().len();
    let mut u = vec![params.u0; n];
    let (mut rvec, mut r) = damped_residual(&ctx.evaluate_all(&u)?, &u, damping);

    let mut report = SolveReport {
        iterations: 0,
        accepted: 0,
        rejected: 0,
        final_residual: r,
        update_residual: f64::INFINITY,
        k_min: k,
        k_max: k,
        k_final: k,
        lipschitz: 0.0,
        converged: false,
        refreshes: 0,
        history: Vec::new(),
    };
    let refreshes_before = ctx.refreshes();

    while report.iterations < params.max_iter {
        report.iterations += 1;
        let cand: Vec<f64> = u.iter().zip(&rvec).map(|(u, r)| u + k * r).collect();
        if cand.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                iteration: report.iterations,
                last_stable: Box::new(u),
            });
        }
        let trial = ctx.evaluate_all(&cand);
        let (cvec, rc) = match trial {
            Ok(f) => damped_residual(&f, &cand, damping),
            // A trial step that maps some ray onto its own source direction
            // is too long; treat it like a residual increase.
            Err(e) if params.fixed_step => return Err(e),
            Err(_) => (Vec::new(), f64::INFINITY),
        };
        let accept = params.fixed_step || rc <= r || (r <= params.tol && rc <= params.tol);
        if !accept {
            report.rejected += 1;
            k *= params.shrink;
            report.k_min = report.k_min.min(k);
            if k < 1e-30 {
                return Err(Error::BlowUp {
                    iteration: report.iterations,
                    last_stable: Box::new(u),
                });
            }
            continue;
        }
        let update = r;
        u = cand;
        rvec = cvec;
        r = rc;
        report.accepted += 1;
        report.update_residual = update;
        report.k_final = k;
        report.history.push(HistoryRow {
            iter: report.iterations,
            k,
            residual: r,
            lipschitz: ctx.table().edge_lipschitz(&u),
        });
        if update <= params.tol && r <= params.tol {
            report.converged = true;
            break;
        }
        if params.level_shift && !params.fixed_step && damping > 0.0 {
            let (lo, hi) = rvec.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let mid = 0.5 * (lo + hi);
            u.iter_mut().for_each(|v| *v += mid / damping);
            rvec.iter_mut().for_each(|v| *v -= mid);
            r = 0.5 * (hi - lo);
        }
        if !params.fixed_step {
            k *= params.growth;
            report.k_max = report.k_max.max(k);
        }
        if params.refresh_interval > 0
            && report.accepted % params.refresh_interval == 0
            && ctx.update_lipschitz(&u)? > 0
        {
            let (v, m) = damped_residual(&ctx.evaluate_all(&u)?, &u, damping);
            rvec = v;
            r = m;
        }
    }
    report.final_residual = r;
    report.refreshes = ctx.refreshes() - refreshes_before;
    report.lipschitz = ctx.table().edge_lipschitz(&u);
    if !report.converged {
        log::warn!(
            "solver stopped after {} iterations with residual {:.3e}",
            report.iterations,
            r
        );
    }
    Ok((u, report))
}

/// Subtracts the area-weighted mean (weights normalized by their sum).
pub fn normalize_mean_zero(u: &[f64], areas: &[f64]) -> Vec<f64> {
    let total: f64 = areas.iter().sum();
    let mean = u.iter().zip(areas).map(|(u, a)| u * a).sum::<f64>() / total;
    u.iter().map(|v| v - mean).collect()
}

/// Largest stencil-edge difference quotient of `u`; warns when above
/// `bound`.
pub fn lipschitz_check(u: &[f64], table: &StencilTable, bound: Option<f64>) -> f64 {
    let l = table.edge_lipschitz(u);
    match bound {
        Some(b) if l > b => log::warn!("solution Lipschitz constant {l:.4} exceeds bound {b:.4}"),
        _ => log::info!("solution Lipschitz constant {l:.4}"),
    }
    l
}

/// Writes `iter,k,residual,lipschitz` rows.
pub fn write_convergence_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "iter,k,residual,lipschitz")?;
    for row in history {
        writeln!(out, "{},{:.6e},{:.6e},{:.6e}", row.iter, row.k, row.residual, row.lipschitz)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_zero_examples() {
        let areas = [1.0, 2.0, 3.0];
        assert_eq!(normalize_mean_zero(&[5.0; 3], &areas), vec![0.0; 3]);
        let w = [3.0, 0.0, -1.0];
        let out = normalize_mean_zero(&w, &areas);
        assert!(out.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-15));
        let shifted: Vec<f64> = w.iter().map(|v| v + 2.5).collect();
        let out = normalize_mean_zero(&shifted, &areas);
        assert!(out.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn params_validation() {
        assert!(SolverParams::default().validate().is_ok());
        let p = SolverParams { tol: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = SolverParams { growth: 1.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = SolverParams { shrink: 1.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = SolverParams { k0: Some(-1.0), ..Default::default() };
        assert!(p.validate().is_err());
    }
}
