use std::f64::consts::PI;
use std::io::Cursor;
use std::path::Path;

use image::ImageFormat;

use super::{normalize, Density};
use crate::sphere_grid::SphereGrid;
use crate::{Error, Result};

/// Row-major grayscale raster. Row 0 is the north edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Domain(format!(
                "raster of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("raster values must be finite and nonnegative".into()));
        }
        Ok(Raster { width, height, data })
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Bilinear sample at longitude `lon ∈ [−π, π]` and latitude
    /// `lat ∈ [−π/2, π/2]`; pixel centers sit at half-integer offsets,
    /// longitude wraps and latitude clamps.
    pub fn sample(&self, lon: f64, lat: f64) -> f64 {
        let u = (lon + PI) / (2.0 * PI) * self.width as f64 - 0.5;
        let v = ((0.5 * PI - lat) / PI * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let c0 = u.floor();
        let fu = u - c0;
        let w = self.width as i64;
        let col0 = (c0 as i64).rem_euclid(w) as usize;
        let col1 = (c0 as i64 + 1).rem_euclid(w) as usize;
        let r0 = v.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let fv = v - r0 as f64;
        let top = self.at(r0, col0) * (1.0 - fu) + self.at(r0, col1) * fu;
        let bottom = self.at(r1, col0) * (1.0 - fu) + self.at(r1, col1) * fu;
        top * (1.0 - fv) + bottom * fv
    }
}

/// Decodes a binary (P5) or ASCII (P2) PGM image into a raster scaled to
/// `[0, 1]` by the image's maximum value.
pub fn parse_pgm(bytes: &[u8]) -> Result<Raster> {
    if !(bytes.starts_with(b"P2") || bytes.starts_with(b"P5")) {
        return Err(Error::Domain("not a PGM image (expected P2 or P5 magic)".into()));
    }
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
        .map_err(|e| Error::Domain(format!("invalid PGM image: {e}")))?;
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v as f64 / u16::MAX as f64).collect();
    Raster::new(w as usize, h as usize, data)
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    parse_pgm(&std::fs::read(path)?)
}

/// Samples an equirectangular raster at every grid direction and
/// normalizes.
pub fn from_equirect_image(raster: &Raster, grid: &SphereGrid) -> Result<Density> {
    if raster.data.iter().all(|&v| v == 0.0) {
        return Err(Error::Domain("image has no positive pixel".into()));
    }
    let values = grid
        .points()
        .iter()
        .map(|x| raster.sample(x.y.atan2(x.x), x.z.clamp(-1.0, 1.0).asin()))
        .collect();
    normalize(&Density::new(values)?, grid.areas())
}
