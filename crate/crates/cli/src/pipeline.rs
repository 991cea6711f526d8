//! Preprocess, solve, normalize, build the reflector, then validate by
//! ray tracing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use reflector_core::density::{
    builtin, from_equirect_image, heat_smooth_until, normalize, positivity_mix, read_density_csv, read_pgm,
    write_density_csv, Density,
};
use reflector_core::ma_operator::{write_residual_csv, OperatorContext};
use reflector_core::optics::build_reflector;
use reflector_core::raytrace::{error_report, reconstruct_intensity, trace, RayTraceReport, TraceMode};
use reflector_core::solver::{lipschitz_check, normalize_mean_zero, solve, write_convergence_csv, SolveReport};
use reflector_core::sphere_grid::{generate_fibonacci, read_grid_file, SphereGrid};
use reflector_core::stencil::{load_table, save_table, StencilTable};
use reflector_core::{Error, Result};
use serde::Serialize;

use crate::config::{DensitySpec, GridSpec, HeatMode, RunConfig};

/// Environment variable naming the stencil cache directory.
pub const CACHE_DIR_VAR: &str = "REFLECTOR_CACHE_DIR";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub use_cache: bool,
    /// Overrides the cache directory; otherwise `$REFLECTOR_CACHE_DIR`,
    /// then `<output>/cache`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub n: usize,
    pub h: f64,
    pub direction_pairs: usize,
    pub relaxed_stencils: usize,
    pub area_sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub density: &'static str,
    pub stage: &'static str,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Preprocessing {
    pub stages: Vec<Stage>,
    pub heat_time: f64,
    pub heat_stop_time: f64,
    pub target_lipschitz: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub final_residual: f64,
    pub update_residual: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub k_final: f64,
    pub converged: bool,
    pub lipschitz_refreshes: usize,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        SolverSummary {
            iterations: r.iterations,
            accepted: r.accepted,
            rejected: r.rejected,
            final_residual: r.final_residual,
            update_residual: r.update_residual,
            k_min: r.k_min,
            k_max: r.k_max,
            k_final: r.k_final,
            converged: r.converged,
            lipschitz_refreshes: r.refreshes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub max_abs_u: f64,
    pub lipschitz: f64,
    pub lipschitz_bound: Option<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stencil_cache: &'static str,
    pub grid_s: f64,
    pub stencils_s: f64,
    pub preprocess_s: f64,
    pub solve_s: f64,
    pub trace_s: f64,
    pub total_s: f64,
}

/// Everything written to `report.json`. `timing` is the only field that
/// varies between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub exit_code: i32,
    pub status: &'static str,
    /// Which density the solver transported from: the configured source
    /// for forward tracing, the configured target for inverse tracing.
    pub solved_from: &'static str,
    pub grid: GridSummary,
    pub preprocessing: Preprocessing,
    pub solver: SolverSummary,
    pub solution: SolutionSummary,
    pub raytrace: RayTraceReport,
    pub timing: Timing,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_GEOMETRY: i32 = 4;

/// Exit status for a pipeline error.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        e if e.is_geometric() => EXIT_GEOMETRY,
        _ => EXIT_OTHER,
    }
}

fn build_grid(spec: &GridSpec, seed: u64) -> Result<SphereGrid> {
    let mut grid = match spec {
        GridSpec::Fibonacci { n } => generate_fibonacci(*n)?,
        GridSpec::File { path } => read_grid_file(path)?,
    };
    if seed != 0 {
        grid.rotate_frames(seed);
    }
    Ok(grid)
}

fn cache_path(dir: &Path, grid: &SphereGrid) -> PathBuf {
    let hex: String = grid.content_hash().iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{hex}-{}.rstc", grid.len()))
}

/// Loads the stencil table from the cache when a valid entry for this grid
/// exists, otherwise builds (and stores) it.
fn stencils(grid: &SphereGrid, config: &RunConfig, opts: &RunOptions) -> Result<(StencilTable, &'static str)> {
    if !opts.use_cache {
        return Ok((StencilTable::build(grid)?, "disabled"));
    }
    let dir = opts
        .cache_dir
        .clone()
        .or_else(|| std::env::var_os(CACHE_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| config.output.join("cache"));
    let path = cache_path(&dir, grid);
    if path.exists() {
        match load_table(&path).and_then(|t| t.check_grid(grid).map(|_| t)) {
            Ok(t) if (t.h() - grid.h()).abs() <= 1e-15 * grid.h() => return Ok((t, "hit")),
            Ok(_) => log::warn!("stale stencil cache {}; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring stencil cache {}: {e}", path.display()),
        }
    }
    let table = StencilTable::build(grid)?;
    if let Err(e) = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| save_table(&path, &table)) {
        log::warn!("could not write stencil cache {}: {e}", path.display());
    }
    Ok((table, "miss"))
}

fn load_density(spec: &DensitySpec, grid: &SphereGrid) -> Result<Density> {
    match spec {
        DensitySpec::Builtin(b) => builtin(b, grid),
        DensitySpec::File(p) => normalize(&read_density_csv(&p.path, grid.len())?, grid.areas()),
        DensitySpec::Image(p) => from_equirect_image(&read_pgm(&p.path)?, grid),
    }
}

fn write_solution_csv(path: &Path, u: &[f64]) -> Result<()> {
    let mut text = String::from("point_id,u\n");
    for (i, v) in u.iter().enumerate() {
        text.push_str(&format!("{i},{v:.12e}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Runs the full pipeline and writes all artifacts into `config.output`.
/// Returns the report; non-convergence is reported through its exit code,
/// not as an error.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    fs::create_dir_all(&config.output)?;

    let t = Instant::now();
    let grid = build_grid(&config.grid, config.seed)?;
    let grid_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (table, cache_status) = stencils(&grid, config, opts)?;
    let stencils_s = t.elapsed().as_secs_f64();
    log::info!(
        "grid: N = {}, h = {:.5}, {} direction pairs, {} relaxed stencils",
        grid.len(),
        grid.h(),
        table.directions().pair_count(),
        table.relaxed_count()
    );

    // Preprocessing. The solve runs from `solve_src` to `solve_dst`; only
    // the destination must be positive and smooth.
    let t = Instant::now();
    let source = load_density(&config.source, &grid)?;
    let target = load_density(&config.target, &grid)?;
    let areas = grid.areas();
    let mut stages = vec![
        Stage { density: "source", stage: "loaded", mass: source.mass(areas) },
        Stage { density: "target", stage: "loaded", mass: target.mass(areas) },
    ];
    let (solved_from, raw_src, raw_dst) = match config.trace {
        TraceMode::Forward => ("source", &source, &target),
        TraceMode::Inverse => ("target", &target, &source),
    };
    let other = if solved_from == "source" { "target" } else { "source" };
    let solve_src = if config.floor_both {
        let d = positivity_mix(raw_src, config.epsilon)?;
        stages.push(Stage { density: solved_from, stage: "positivity_mix", mass: d.mass(areas) });
        d
    } else {
        raw_src.clone()
    };
    let mixed = positivity_mix(raw_dst, config.epsilon)?;
    stages.push(Stage { density: other, stage: "positivity_mix", mass: mixed.mass(areas) });
    let h = grid.h();
    let stop = config.heat.stop_time.resolve(h);
    let (solve_dst, heat_time) = match config.heat.mode {
        HeatMode::Off => (mixed, 0.0),
        HeatMode::Full => heat_smooth_until(&mixed, &table, areas, stop, 0.0)?,
        HeatMode::Auto => {
            let target_lip = config.heat.lipschitz_constant * h.powf(-0.25);
            heat_smooth_until(&mixed, &table, areas, stop, target_lip)?
        }
    };
    stages.push(Stage { density: other, stage: "heat_smooth", mass: solve_dst.mass(areas) });
    let preprocessing = Preprocessing {
        stages,
        heat_time,
        heat_stop_time: stop,
        target_lipschitz: table.edge_lipschitz(solve_dst.values()),
    };
    write_density_csv(&config.output.join("density_source.csv"), solve_src.values())?;
    write_density_csv(&config.output.join("density_target.csv"), solve_dst.values())?;
    let preprocess_s = t.elapsed().as_secs_f64();

    // Solve, normalize, build.
    let t = Instant::now();
    let mut ctx = OperatorContext::new(&grid, &table, &solve_src, &solve_dst, config.operator.params())?;
    let (u, solve_report) = solve(&mut ctx, &config.solver.params())?;
    let damping = if config.solver.damping { h.sqrt() } else { 0.0 };
    let residual: Vec<f64> = ctx
        .evaluate_all(&u)?
        .iter()
        .zip(&u)
        .map(|(f, u)| f - damping * u)
        .collect();
    let solve_s = t.elapsed().as_secs_f64();
    let u = normalize_mean_zero(&u, areas);
    let lipschitz = lipschitz_check(&u, &table, config.lipschitz_bound);
    let reflector = build_reflector(&grid, &u);
    write_solution_csv(&config.output.join("solution.csv"), &u)?;
    write_residual_csv(&config.output.join("residual.csv"), &residual)?;
    write_convergence_csv(&config.output.join("convergence.csv"), &solve_report.history)?;
    reflector.write_ply(&config.output.join("reflector.ply"))?;
    reflector.write_csv(&config.output.join("reflector.csv"))?;

    // Validation.
    let t = Instant::now();
    let tr = trace(&u, &grid, &table, &solve_src, config.trace);
    let rec = reconstruct_intensity(&solve_src, areas, &tr, &grid)?;
    let metrics = error_report(raw_dst, &rec.density, areas);
    let source_mass: f64 = tr.sources.iter().map(|&i| solve_src.values()[i] * areas[i]).sum();
    let raytrace = RayTraceReport::new(&tr, &rec, source_mass, metrics, areas);
    write_density_csv(&config.output.join("reconstruction.csv"), rec.density.values())?;
    let trace_s = t.elapsed().as_secs_f64();

    let (exit_code, status) = if solve_report.converged {
        (EXIT_OK, "converged")
    } else {
        (EXIT_NOT_CONVERGED, "not_converged")
    };
    let report = RunReport {
        exit_code,
        status,
        solved_from,
        grid: GridSummary {
            n: grid.len(),
            h,
            direction_pairs: table.directions().pair_count(),
            relaxed_stencils: table.relaxed_count(),
            area_sum: areas.iter().sum(),
        },
        preprocessing,
        solver: SolverSummary::from(&solve_report),
        solution: SolutionSummary {
            max_abs_u: max_abs(&u),
            lipschitz,
            lipschitz_bound: config.lipschitz_bound,
            rho_min: reflector.rho.iter().cloned().fold(f64::INFINITY, f64::min),
            rho_max: reflector.rho.iter().cloned().fold(0.0, f64::max),
        },
        raytrace,
        timing: Timing {
            stencil_cache: cache_status,
            grid_s,
            stencils_s,
            preprocess_s,
            solve_s,
            trace_s,
            total_s: start.elapsed().as_secs_f64(),
        },
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Domain(e.to_string()))?;
    fs::write(config.output.join("report.json"), text + "\n")?;
    log::info!(
        "{status} after {} iterations; ray trace avg |error| {:.4} ({:.1}% of max)",
        solve_report.iterations,
        report.raytrace.metrics.avg_abs,
        100.0 * report.raytrace.metrics.pct_of_max
    );
    Ok(report)
}
