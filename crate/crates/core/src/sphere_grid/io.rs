use std::fs;
use std::io::Write;
use std::path::Path;

use super::SphereGrid;
use crate::{Error, Result, Vec3};

/// Parses a point file: one `x y z` unit vector per line, whitespace
/// separated, `#` starts a comment.
pub fn parse_grid_file(text: &str) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                k + 1,
                format!("expected 3 coordinates, found {}", fields.len()),
            ));
        }
        let mut xyz = [0.0; 3];
        for (slot, field) in xyz.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .map_err(|e| Error::parse(k + 1, format!("bad coordinate {field:?}: {e}")))?;
        }
        let p = Vec3::from(xyz);
        let norm = p.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::parse(k + 1, format!("not a unit vector (norm {norm})")));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn read_grid_file(path: &Path) -> Result<SphereGrid> {
    let text = fs::read_to_string(path)?;
    SphereGrid::from_points(parse_grid_file(&text)?)
}

pub fn write_grid_file(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# x y z")?;
    for p in points {
        writeln!(out, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
    }
    out.flush()?;
    Ok(())
}
