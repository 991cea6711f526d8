//! Intensities on the grid and their preprocessing.

mod builtin;
mod image;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

pub use self::image::{from_equirect_image, parse_pgm, read_pgm, Raster};
pub use builtin::{builtin, in_triangle, triangle_area, triangle_vertices, Builtin};

use crate::sphere_grid::{SphereGrid, SpatialIndex};
use crate::stencil::StencilTable;
use crate::{Error, Result, Vec3};

/// Nonnegative per-point intensity (per steradian).
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    values: Vec<f64>,
}

impl Density {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!(
                "density value at point {i} is {} (must be finite and nonnegative)",
                values[i]
            )));
        }
        Ok(Density { values })
    }

    pub fn uniform(n: usize) -> Self {
        Density {
            values: vec![1.0 / (4.0 * PI); n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ f_i · area_i`.
    pub fn mass(&self, areas: &[f64]) -> f64 {
        self.values.iter().zip(areas).map(|(f, a)| f * a).sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Scales `d` to unit mass.
pub fn normalize(d: &Density, areas: &[f64]) -> Result<Density> {
    if d.len() != areas.len() {
        return Err(Error::Domain(format!(
            "density has {} values for {} cells",
            d.len(),
            areas.len()
        )));
    }
    let mass = d.mass(areas);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Domain(format!("cannot normalize a density of mass {mass}")));
    }
    Ok(Density {
        values: d.values.iter().map(|v| v / mass).collect(),
    })
}

/// `(1 − ε) f + ε/(4π)`.
pub fn positivity_mix(d: &Density, eps: f64) -> Result<Density> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("positivity epsilon must lie in (0, 1), got {eps}")));
    }
    let floor = eps / (4.0 * PI);
    Ok(Density {
        values: d.values.iter().map(|v| (1.0 - eps) * v + floor).collect(),
    })
}

/// Largest forward-Euler step for the discrete heat equation:
/// `min_i 1/Σ_j a_j` over both coordinate stencils.
pub fn heat_step_bound(table: &StencilTable) -> Result<f64> {
    let mut k = f64::INFINITY;
    for i in 0..table.len() {
        let sum: f64 = (0..2).flat_map(|ax| table.coordinate(i, ax).a).sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Stencil {
                point: i,
                direction: 0.0,
                reason: format!("Laplacian weights sum to {sum}"),
            });
        }
        k = k.min(1.0 / sum);
    }
    Ok(k)
}

fn heat_step(table: &StencilTable, v: &[f64], k: f64) -> Vec<f64> {
    (0..v.len())
        .into_par_iter()
        .map(|i| v[i] + k * table.laplacian(i, v))
        .collect()
}

/// Forward-Euler heat flow `v ← v + k Δʰ v` to `stop_time`, with the global
/// stable step, then renormalized.
pub fn heat_smooth(d: &Density, table: &StencilTable, areas: &[f64], stop_time: f64) -> Result<Density> {
    Ok(heat_smooth_until(d, table, areas, stop_time, 0.0)?.0)
}

/// Like [`heat_smooth`], but stops early once the discrete edge Lipschitz
/// constant drops to `lipschitz_target`. Returns the density and the time
/// reached.
pub fn heat_smooth_until(
    d: &Density,
    table: &StencilTable,
    areas: &[f64],
    stop_time: f64,
    lipschitz_target: f64,
) -> Result<(Density, f64)> {
    if !(stop_time >= 0.0 && stop_time.is_finite()) {
        return Err(Error::Config(format!("heat stop time must be finite and nonnegative, got {stop_time}")));
    }
    let k_max = heat_step_bound(table)?;
    let steps = (stop_time / k_max).ceil() as usize;
    let mut v = d.values.clone();
    let mut t = 0.0;
    if steps > 0 {
        let k = stop_time / steps as f64;
        for _ in 0..steps {
            if lipschitz_target > 0.0 && table.edge_lipschitz(&v) <= lipschitz_target {
                break;
            }
            v = heat_step(table, &v, k);
            t += k;
        }
    }
    log::debug!("heat smoothing stopped at t = {t:.4e} of {stop_time:.4e}");
    // The maximum principle keeps v ≥ 0; clamp rounding noise only.
    let out = Density {
        values: v.into_iter().map(|x| x.max(0.0)).collect(),
    };
    Ok((normalize(&out, areas)?, t))
}

/// Smooth interpolant of grid values at arbitrary directions: a normalized
/// Wendland C² kernel average over the points within `support`.
#[derive(Debug)]
pub struct Interpolant<'a> {
    values: &'a [f64],
    index: &'a SpatialIndex,
    points: &'a [Vec3],
    support: f64,
    chord2: f64,
}

impl<'a> Interpolant<'a> {
    /// `support` must exceed the covering radius so every query sees at
    /// least one point; `2h` is the usual choice.
    pub fn new(grid: &'a SphereGrid, values: &'a [f64], support: f64) -> Self {
        let s = (0.5 * support.min(PI)).sin();
        Interpolant {
            values,
            index: grid.index(),
            points: grid.points(),
            support,
            chord2: 4.0 * s * s,
        }
    }

    pub fn eval(&self, y: &Vec3) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (id, _) in self.index.within_chord2(y, self.chord2) {
            let d = crate::sphere_grid::arc(y, &self.points[id]);
            let q = d / self.support;
            if q < 1.0 {
                let w = (1.0 - q).powi(4) * (4.0 * q + 1.0);
                num += w * self.values[id];
                den += w;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            self.values[self.index.nearest(y)]
        }
    }
}

/// Writes `point_id,value` rows.
pub fn write_density_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["point_id", "value"]).map_err(csv_err)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:.12e}")]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, format!("{other:?}")),
    }
}

/// Parses a `point_id,value` CSV for a grid of `n` points. Every id must
/// appear exactly once.
pub fn parse_density_csv(text: &str, n: usize) -> Result<Density> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() != 2 || &headers[0] != "point_id" || &headers[1] != "value" {
        return Err(Error::parse(1, "expected header \"point_id,value\""));
    }
    let mut values = vec![f64::NAN; n];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 fields, found {}", record.len())));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|e| Error::parse(line, format!("bad point id {:?}: {e}", &record[0])))?;
        let value: f64 = record[1]
            .parse()
            .map_err(|e| Error::parse(line, format!("bad value {:?}: {e}", &record[1])))?;
        if id >= n {
            return Err(Error::parse(line, format!("point id {id} out of range for {n} points")));
        }
        if !values[id].is_nan() {
            return Err(Error::parse(line, format!("duplicate point id {id}")));
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::parse(line, format!("value {value} must be finite and nonnegative")));
        }
        values[id] = value;
    }
    if let Some(missing) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Domain(format!("density file has no value for point {missing}")));
    }
    Density::new(values)
}

pub fn read_density_csv(path: &Path, n: usize) -> Result<Density> {
    parse_density_csv(&fs::read_to_string(path)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_grid::generate_fibonacci;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalize_examples() {
        let grid = generate_fibonacci(500).unwrap();
        let d = normalize(&Density::new(vec![3.0; grid.len()]).unwrap(), grid.areas()).unwrap();
        for v in d.values() {
            assert_abs_diff_eq!(*v, 1.0 / (4.0 * PI), epsilon = 1e-9);
        }
        let again = normalize(&d, grid.areas()).unwrap();
        for (a, b) in again.values().iter().zip(d.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(matches!(
            normalize(&Density::new(vec![0.0; grid.len()]).unwrap(), grid.areas()),
            Err(Error::Domain(_))
        ));
        assert!(Density::new(vec![-1.0]).is_err());
    }

    #[test]
    fn mixing_examples() {
        let grid = generate_fibonacci(500).unwrap();
        let half: Vec<f64> = grid.points().iter().map(|x| if x.z > 0.0 { 1.0 } else { 0.0 }).collect();
        let d = normalize(&Density::new(half).unwrap(), grid.areas()).unwrap();
        let m = positivity_mix(&d, 0.3).unwrap();
        assert!(m.min() >= 0.3 / (4.0 * PI) - 1e-12);
        assert_abs_diff_eq!(m.mass(grid.areas()), 1.0, epsilon = 1e-9);
        let u = Density::uniform(10);
        assert_eq!(positivity_mix(&u, 0.5).unwrap().values(), u.values());
        assert!(matches!(positivity_mix(&u, 1.5), Err(Error::Config(_))));
        assert!(matches!(positivity_mix(&u, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = std::env::temp_dir().join(format!("density-csv-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        let vals = vec![0.25, 1.5, 0.0];
        write_density_csv(&path, &vals).unwrap();
        assert_eq!(read_density_csv(&path, 3).unwrap().values(), &vals[..]);
        fs::remove_dir_all(&dir).ok();

        assert!(parse_density_csv("point_id,value\n0,1\n0,2\n", 2).is_err());
        assert!(parse_density_csv("point_id,value\n0,1\n", 2).is_err());
        assert!(parse_density_csv("point_id,value\n0,1\n5,1\n", 2).is_err());
        assert!(parse_density_csv("id,v\n0,1\n", 1).is_err());
        let err = parse_density_csv("point_id,value\n0,1\n1,-3\n", 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }
}
