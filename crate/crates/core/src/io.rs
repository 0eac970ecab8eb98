//! Binary and CSV dump formats.
//!
//! Field dump (little-endian):
//! `magic "MFGF" | version u32 | dim u32 | n u32 | L f64 | count u32`
//! followed by `count` row-major f64 arrays of length `n^dim`.
//!
//! Trajectory dump (little-endian):
//! `magic "MFGT" | n_players u32 | steps u32 | dim u32` followed by
//! `(steps+1) * n_players * dim` f64 positions, frame-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MfgError, Result};
use crate::grid::{Field, Grid};
use crate::particles::ParticleEnsemble;

const FIELD_MAGIC: &[u8; 4] = b"MFGF";
const TRAJ_MAGIC: &[u8; 4] = b"MFGT";
const FIELD_VERSION: u32 = 1;

pub fn write_field_dump(path: &Path, fields: &[&Field]) -> Result<()> {
    let first = fields
        .first()
        .ok_or_else(|| MfgError::InvalidParam("nothing to dump".into()))?;
    let grid = first.grid();
    for f in fields {
        if f.grid() != grid {
            return Err(MfgError::GridMismatch(
                "all dumped fields must share a grid".into(),
            ));
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(FIELD_MAGIC)?;
    out.write_all(&FIELD_VERSION.to_le_bytes())?;
    out.write_all(&(grid.dim() as u32).to_le_bytes())?;
    out.write_all(&(grid.points_per_axis() as u32).to_le_bytes())?;
    out.write_all(&grid.half_width().to_le_bytes())?;
    out.write_all(&(fields.len() as u32).to_le_bytes())?;
    for f in fields {
        for v in f.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_field_dump(path: &Path) -> Result<Vec<Field>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(MfgError::InvalidParam(
            "not a field dump (bad magic)".into(),
        ));
    }
    let version = read_u32(&mut file)?;
    if version != FIELD_VERSION {
        return Err(MfgError::InvalidParam(format!(
            "unsupported field dump version {version}"
        )));
    }
    let dim = read_u32(&mut file)? as usize;
    let n = read_u32(&mut file)? as usize;
    let l = read_f64(&mut file)?;
    let count = read_u32(&mut file)? as usize;
    let grid = Grid::new(dim, l, n)?;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(read_f64(&mut file)?);
        }
        fields.push(Field::from_values(grid, values)?);
    }
    Ok(fields)
}

/// One row per node: `x1[,x2],value`.
pub fn write_field_csv(path: &Path, field: &Field) -> Result<()> {
    let grid = field.grid();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    match grid.dim() {
        1 => writeln!(out, "x1,value")?,
        _ => writeln!(out, "x1,x2,value")?,
    }
    for idx in 0..grid.len() {
        let x = grid.node(idx);
        match grid.dim() {
            1 => writeln!(out, "{},{}", fmt(x[0]), fmt(field.values()[idx]))?,
            _ => writeln!(
                out,
                "{},{},{}",
                fmt(x[0]),
                fmt(x[1]),
                fmt(field.values()[idx])
            )?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Shortest representation that round-trips the f64 exactly.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trajectories(path: &Path, ens: &ParticleEnsemble) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(TRAJ_MAGIC)?;
    out.write_all(&(ens.n_players() as u32).to_le_bytes())?;
    out.write_all(&(ens.steps() as u32).to_le_bytes())?;
    out.write_all(&(ens.dim() as u32).to_le_bytes())?;
    for k in 0..=ens.steps() {
        for x in ens.frame_positions(k) {
            for axis in 0..ens.dim() {
                out.write_all(&x[axis].to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `(n_players, steps, dim, frame-major positions)`.
pub fn read_trajectories(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != TRAJ_MAGIC {
        return Err(MfgError::InvalidParam(
            "not a trajectory dump (bad magic)".into(),
        ));
    }
    let n = read_u32(&mut file)? as usize;
    let steps = read_u32(&mut file)? as usize;
    let dim = read_u32(&mut file)? as usize;
    let count = (steps + 1) * n * dim;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(read_f64(&mut file)?);
    }
    Ok((n, steps, dim, data))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
