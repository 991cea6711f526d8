//! Binary stencil cache.
//!
//! Layout, little endian:
//!
//! ```text
//! magic "RSTC" | version u32 | grid hash [u8; 32] | h f64 | N u64 | M u64
//! per point:   neighbor count u32 | ids u32 × count | distances f64 × count
//!              per stencil (2M + 2): relaxation u8 | local u16 × 4
//!                                    | r, θ f64 × 8 | a f64 × 4 | b f64 × 4 | det f64
//! ```

use std::fs;
use std::path::Path;

use super::{direction_set, DirectionalStencil, Polar, Relaxation, StencilTable};
use crate::{Error, Result};

pub const CACHE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"RSTC";

pub fn encode_table(table: &StencilTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + table.stencils.len() * 170);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&table.grid_hash);
    out.extend_from_slice(&table.h.to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    out.extend_from_slice(&(table.directions.pair_count() as u64).to_le_bytes());
    for i in 0..table.len() {
        let ids = table.neighbors(i);
        out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
        for id in ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for d in table.neighbor_distances(i) {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for s in table.point_stencils(i) {
            out.push(s.relaxation as u8);
            for l in s.local {
                out.extend_from_slice(&l.to_le_bytes());
            }
            for p in s.polar {
                out.extend_from_slice(&p.r.to_le_bytes());
                out.extend_from_slice(&p.theta.to_le_bytes());
            }
            for v in s.a.iter().chain(&s.b).chain([&s.det]) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Cache(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const K: usize>(&mut self) -> Result<[u8; K]> {
        Ok(self.take(K)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.array()?);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Cache(format!("non-finite value before byte {}", self.pos)))
        }
    }
}

/// Decodes a cache produced by [`encode_table`], validating every index.
pub fn decode_table(bytes: &[u8]) -> Result<StencilTable> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!(
            "unsupported version {version} (expected {CACHE_VERSION})"
        )));
    }
    let grid_hash: [u8; 32] = r.array()?;
    let h = r.f64()?;
    let directions = direction_set(h).map_err(|e| Error::Cache(e.to_string()))?;
    let n = r.u64()?;
    let m = r.u64()?;
    if m != directions.pair_count() as u64 {
        return Err(Error::Cache(format!(
            "pair count {m} does not match h = {h}"
        )));
    }
    if n > u32::MAX as u64 {
        return Err(Error::Cache(format!("point count {n} too large")));
    }
    let n = n as usize;
    let per_point = directions.len() + 2;
    // Each point needs at least the count field plus its stencil records.
    let min_point_bytes = 4 + per_point * (1 + 8 + 64 + 64 + 8);
    if n.saturating_mul(min_point_bytes) > bytes.len() {
        return Err(Error::Cache("file too short for the declared size".into()));
    }

    let mut stencils = Vec::with_capacity(n * per_point);
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbor_ids = Vec::new();
    let mut neighbor_dist = Vec::new();
    offsets.push(0u32);
    for i in 0..n {
        let count = r.u32()? as usize;
        if count == 0 || count > u16::MAX as usize || count > bytes.len() {
            return Err(Error::Cache(format!("point {i}: bad neighbor count {count}")));
        }
        let start = neighbor_ids.len();
        for _ in 0..count {
            let id = r.u32()?;
            if id as usize >= n || id as usize == i {
                return Err(Error::Cache(format!("point {i}: bad neighbor id {id}")));
            }
            if neighbor_ids.len() > start && neighbor_ids.last() >= Some(&id) {
                return Err(Error::Cache(format!("point {i}: neighbor ids not sorted")));
            }
            neighbor_ids.push(id);
        }
        for _ in 0..count {
            let d = r.f64()?;
            if d <= 0.0 {
                return Err(Error::Cache(format!("point {i}: bad neighbor distance")));
            }
            neighbor_dist.push(d);
        }
        for k in 0..per_point {
            let relaxation = Relaxation::from_code(r.u8()?)
                .ok_or_else(|| Error::Cache(format!("point {i}: bad relaxation code")))?;
            let mut local = [0u16; 4];
            let mut neighbors = [0u32; 4];
            for (l, nb) in local.iter_mut().zip(&mut neighbors) {
                *l = r.u16()?;
                if *l as usize >= count {
                    return Err(Error::Cache(format!("point {i}: local index out of range")));
                }
                *nb = neighbor_ids[start + *l as usize];
            }
            let mut polar = [Polar { r: 0.0, theta: 0.0 }; 4];
            for p in &mut polar {
                p.r = r.f64()?;
                p.theta = r.f64()?;
            }
            let mut a = [0.0; 4];
            let mut b = [0.0; 4];
            for v in a.iter_mut().chain(&mut b) {
                *v = r.f64()?;
            }
            let det = r.f64()?;
            if a.iter().any(|&v| v <= 0.0) || det == 0.0 {
                return Err(Error::Cache(format!(
                    "point {i}, stencil {k}: invalid coefficients"
                )));
            }
            stencils.push(DirectionalStencil {
                center: i as u32,
                neighbors,
                local,
                polar,
                a,
                b,
                det,
                relaxation,
            });
        }
        offsets.push(neighbor_ids.len() as u32);
    }
    if r.pos != bytes.len() {
        return Err(Error::Cache(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(StencilTable {
        h,
        directions,
        grid_hash,
        stencils,
        offsets,
        neighbor_ids,
        neighbor_dist,
    })
}

pub fn save_table(path: &Path, table: &StencilTable) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    // Write then rename so a concurrent reader never sees a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, encode_table(table))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<StencilTable> {
    decode_table(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_grid::generate_fibonacci;

    #[test]
    fn round_trip_and_corruption() {
        let grid = generate_fibonacci(300).unwrap();
        let table = StencilTable::build(&grid).unwrap();
        let bytes = encode_table(&table);
        let back = decode_table(&bytes).unwrap();
        assert_eq!(back.stencils, table.stencils);
        assert_eq!(back.neighbor_ids, table.neighbor_ids);
        assert_eq!(back.offsets, table.offsets);
        back.check_grid(&grid).unwrap();

        assert!(decode_table(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_table(&extra).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_table(&bad), Err(Error::Cache(_))));
        assert!(decode_table(b"").is_err());
    }
}
