//! Ray-trace validation: map grid directions through the reflector and
//! rebuild the far-field intensity from `f1(x_i) Δx_i ≈ f2(y_i) Δy_i`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::optics::optical_map;
use crate::sphere_grid::SphereGrid;
use crate::stencil::StencilTable;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Rays from the source density, through the reflector solved for
    /// source → target.
    Forward,
    /// Rays from the target density, through the reflector solved with the
    /// roles of the densities swapped.
    Inverse,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub mode: TraceMode,
    /// Source point ids that were traced.
    pub sources: Vec<usize>,
    /// Mapped directions, matching `sources`.
    pub mapped: Vec<Vec3>,
    /// Rays in the support that could not be traced.
    pub excluded: usize,
}

/// Maps every point in the support of `f_source` by `T(x_i, ∇ʰu(x_i))`.
pub fn trace(u: &[f64], grid: &SphereGrid, table: &StencilTable, f_source: &Density, mode: TraceMode) -> Trace {
    let results: Vec<Option<(usize, Option<Vec3>)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if f_source.values()[i] <= 0.0 {
                return None;
            }
            let p = table.gradient(i, u);
            let y = optical_map(grid.frame(i), p);
            let ok = p.iter().all(|v| v.is_finite()) && (y.norm() - 1.0).abs() < 1e-9;
            Some((i, ok.then_some(y)))
        })
        .collect();
    let mut out = Trace {
        mode,
        sources: Vec::new(),
        mapped: Vec::new(),
        excluded: 0,
    };
    for (i, y) in results.into_iter().flatten() {
        match y {
            Some(y) => {
                out.sources.push(i);
                out.mapped.push(y);
            }
            None => out.excluded += 1,
        }
    }
    if out.excluded > 0 {
        log::warn!("{} rays excluded from the trace", out.excluded);
    }
    out
}

/// Reconstructed intensity and the exact deposited mass.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub density: Density,
    pub deposited_mass: f64,
}

/// Deposits `f_source(x_i) Δx_i` at the target point nearest to each mapped
/// direction and divides by the target cell areas.
pub fn reconstruct_intensity(
    f_source: &Density,
    source_areas: &[f64],
    trace: &Trace,
    target: &SphereGrid,
) -> Result<Reconstruction> {
    if trace.mapped.is_empty() {
        return Err(Error::Domain("no traced rays to reconstruct from".into()));
    }
    let bins: Vec<usize> = trace.mapped.par_iter().map(|y| target.nearest(y)).collect();
    let mut mass = vec![0.0; target.len()];
    let mut deposited = 0.0;
    // Sequential merge in source order keeps the sums deterministic.
    for (&i, &bin) in trace.sources.iter().zip(&bins) {
        let m = f_source.values()[i] * source_areas[i];
        mass[bin] += m;
        deposited += m;
    }
    let values = mass.iter().zip(target.areas()).map(|(m, a)| m / a).collect();
    Ok(Reconstruction {
        density: Density::new(values)?,
        deposited_mass: deposited,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// `(1/N) Σ |f_ref − f_rt|`.
    pub avg_abs: f64,
    /// `avg_abs / max f_ref`.
    pub pct_of_max: f64,
    pub max_error: f64,
    /// `Σ f_rt Δy − Σ f_ref Δy`.
    pub mass_defect: f64,
    /// Fraction of points where `f_rt` exceeds `max f_ref`, i.e. would be
    /// clipped by a colorbar fitted to the reference.
    pub clip_fraction: f64,
}

pub fn error_report(f_ref: &Density, f_rt: &Density, areas: &[f64]) -> ErrorMetrics {
    let n = f_ref.len() as f64;
    let max_ref = f_ref.max();
    let diffs = f_ref.values().iter().zip(f_rt.values()).map(|(a, b)| (a - b).abs());
    let avg_abs = diffs.clone().sum::<f64>() / n;
    let max_error = diffs.fold(0.0, f64::max);
    let clipped = f_rt.values().iter().filter(|&&v| v > max_ref).count();
    ErrorMetrics {
        avg_abs,
        pct_of_max: if max_ref > 0.0 { avg_abs / max_ref } else { f64::INFINITY },
        max_error,
        mass_defect: f_rt.mass(areas) - f_ref.mass(areas),
        clip_fraction: clipped as f64 / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayTraceReport {
    pub mode: TraceMode,
    pub traced: usize,
    pub excluded: usize,
    pub source_mass: f64,
    pub deposited_mass: f64,
    pub reconstructed_mass: f64,
    pub metrics: ErrorMetrics,
}

impl RayTraceReport {
    pub fn new(trace: &Trace, rec: &Reconstruction, source_mass: f64, metrics: ErrorMetrics, target_areas: &[f64]) -> Self {
        RayTraceReport {
            mode: trace.mode,
            traced: trace.mapped.len(),
            excluded: trace.excluded,
            source_mass,
            deposited_mass: rec.deposited_mass,
            reconstructed_mass: rec.density.mass(target_areas),
            metrics,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Domain(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
