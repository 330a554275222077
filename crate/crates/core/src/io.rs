//! Serialisation of paths, gridded fields, averaged fields and atom flows.
//!
//! Binary files start with an 8-byte magic tag followed by little-endian
//! `u64`/`f64` header words and `f64` data in row-major order.

use std::io::{BufRead, Read, Write};

use crate::averaging::AveragedField;
use crate::error::{Error, Result};
use crate::grid::{GriddedField, SpatialGrid, TimeGrid};
use crate::nlyi::EmpiricalMeasureFlow;
use crate::paths::{NoiseKind, SamplePath};

const PATH_MAGIC: &[u8; 8] = b"MFYPATH1";
const GRID_MAGIC: &[u8; 8] = b"MFYGRID1";
const FLOW_MAGIC: &[u8; 8] = b"MFYFLOW1";

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_data(w: &mut impl Write, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * data.len());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(w.write_all(&buf)?)
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_usize(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    if v > (1 << 40) {
        return format_err(format!("implausible {what} {v}"));
    }
    Ok(v as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_data(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * len];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return format_err(format!("expected {} header", String::from_utf8_lossy(magic)));
    }
    Ok(())
}

fn check_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => format_err("trailing bytes after data"),
    }
}

/// CSV with columns `t,x_1,...,x_d`.
pub fn write_path_csv(path: &SamplePath, w: &mut impl Write) -> Result<()> {
    let d = path.dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=d).map(|a| format!("x_{a}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for k in 0..path.len() {
        write!(w, "{:.16e}", path.grid().time(k))?;
        for v in path.at(k) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a path CSV. The time column must start at 0 and be uniform.
pub fn read_path_csv(r: impl BufRead) -> Result<SamplePath> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return format_err("empty path CSV"),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 2 || cols[0] != "t" {
        return format_err("path CSV header must be t,x_1,...");
    }
    let d = cols.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 1 {
            return format_err(format!("row {} has {} columns, expected {}", lineno + 2, fields.len(), d + 1));
        }
        let mut parsed = fields.iter().map(|f| f.trim().parse::<f64>());
        times.push(parsed.next().unwrap().map_err(|e| Error::Format(format!("row {}: {e}", lineno + 2)))?);
        for v in parsed {
            values.push(v.map_err(|e| Error::Format(format!("row {}: {e}", lineno + 2)))?);
        }
    }
    if times.len() < 2 {
        return format_err("path CSV needs at least two rows");
    }
    let n = times.len() - 1;
    let horizon = times[n];
    let grid = TimeGrid::new(horizon, n)?;
    let tol = 1e-9 * grid.dt();
    if let Some(k) = (0..=n).find(|&k| (times[k] - grid.time(k)).abs() > tol) {
        return format_err(format!("time column is not uniform from 0 at row {}", k + 2));
    }
    SamplePath::new(grid, d, values)
}

fn kind_code(kind: NoiseKind) -> (u64, f64) {
    match kind {
        NoiseKind::Zero => (0, 0.0),
        NoiseKind::Brownian => (1, 0.5),
        NoiseKind::Fbm { hurst } => (2, hurst),
    }
}

/// Header: `d`, `n_steps`, `T`, kind code (0 zero, 1 Brownian, 2 fBm), `H`.
pub fn write_path_binary(path: &SamplePath, kind: NoiseKind, w: &mut impl Write) -> Result<()> {
    let (code, h) = kind_code(kind);
    w.write_all(PATH_MAGIC)?;
    put_u64(w, path.dim() as u64)?;
    put_u64(w, path.grid().n_steps() as u64)?;
    put_f64(w, path.grid().horizon())?;
    put_u64(w, code)?;
    put_f64(w, h)?;
    put_data(w, path.values())
}

pub fn read_path_binary(r: &mut impl Read) -> Result<(SamplePath, NoiseKind)> {
    check_magic(r, PATH_MAGIC)?;
    let d = get_usize(r, "dimension")?;
    let n = get_usize(r, "step count")?;
    let horizon = get_f64(r)?;
    let code = get_u64(r)?;
    let h = get_f64(r)?;
    let kind = match code {
        0 => NoiseKind::Zero,
        1 => NoiseKind::Brownian,
        2 => NoiseKind::Fbm { hurst: h },
        c => return format_err(format!("unknown noise kind {c}")),
    };
    let grid = TimeGrid::new(horizon, n)?;
    let values = get_data(r, (n + 1) * d)?;
    check_eof(r)?;
    Ok((SamplePath::new(grid, d, values)?, kind))
}

fn put_grid_header(w: &mut impl Write, g: &SpatialGrid, comps: usize, tgrid: Option<&TimeGrid>) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    put_u64(w, g.dim() as u64)?;
    put_u64(w, g.n_cells() as u64)?;
    put_f64(w, g.half_width())?;
    put_u64(w, comps as u64)?;
    put_u64(w, tgrid.map_or(0, |t| t.n_steps() as u64))?;
    put_f64(w, tgrid.map_or(0.0, |t| t.horizon()))
}

fn get_grid_header(r: &mut impl Read) -> Result<(SpatialGrid, usize, Option<TimeGrid>)> {
    check_magic(r, GRID_MAGIC)?;
    let d = get_usize(r, "dimension")?;
    let n_cells = get_usize(r, "cell count")?;
    let l = get_f64(r)?;
    let comps = get_usize(r, "component count")?;
    let n_steps = get_usize(r, "step count")?;
    let horizon = get_f64(r)?;
    let sgrid = SpatialGrid::new(l, n_cells, d)?;
    let tgrid = if n_steps == 0 { None } else { Some(TimeGrid::new(horizon, n_steps)?) };
    Ok((sgrid, comps, tgrid))
}

/// A static field: the time header words are zero.
pub fn write_field_binary(field: &GriddedField, w: &mut impl Write) -> Result<()> {
    put_grid_header(w, &field.grid, field.components, None)?;
    put_data(w, &field.data)
}

pub fn read_field_binary(r: &mut impl Read) -> Result<GriddedField> {
    let (sgrid, comps, tgrid) = get_grid_header(r)?;
    if tgrid.is_some() {
        return format_err("file holds a time-dependent field");
    }
    let data = get_data(r, sgrid.n_nodes() * comps)?;
    check_eof(r)?;
    GriddedField::new(sgrid, comps, data)
}

/// Stores the cumulative slices `Γ_{0,t_k}` for every grid time.
pub fn write_averaged_binary(field: &AveragedField, w: &mut impl Write) -> Result<()> {
    put_grid_header(w, field.spatial_grid(), field.components(), Some(field.time_grid()))?;
    if field.is_zero() {
        let len = field.time_grid().n_points() * field.spatial_grid().n_nodes() * field.components();
        return put_data(w, &vec![0.0; len]);
    }
    put_data(w, field.cumulative())
}

pub fn read_averaged_binary(r: &mut impl Read) -> Result<AveragedField> {
    let (sgrid, comps, tgrid) = get_grid_header(r)?;
    let Some(tgrid) = tgrid else {
        return format_err("file holds a static field");
    };
    let data = get_data(r, tgrid.n_points() * sgrid.n_nodes() * comps)?;
    check_eof(r)?;
    AveragedField::from_cumulative(sgrid, tgrid, comps, data)
}

/// Header: `d`, `n_atoms`, `n_steps`, `T`; data ordered time, atom, component.
pub fn write_flow_binary(flow: &EmpiricalMeasureFlow, w: &mut impl Write) -> Result<()> {
    w.write_all(FLOW_MAGIC)?;
    put_u64(w, flow.dim() as u64)?;
    put_u64(w, flow.n_atoms() as u64)?;
    put_u64(w, flow.grid().n_steps() as u64)?;
    put_f64(w, flow.grid().horizon())?;
    put_data(w, flow.data())
}

pub fn read_flow_binary(r: &mut impl Read) -> Result<EmpiricalMeasureFlow> {
    check_magic(r, FLOW_MAGIC)?;
    let d = get_usize(r, "dimension")?;
    let m = get_usize(r, "atom count")?;
    let n = get_usize(r, "step count")?;
    let horizon = get_f64(r)?;
    let grid = TimeGrid::new(horizon, n)?;
    let data = get_data(r, (n + 1) * m * d)?;
    check_eof(r)?;
    EmpiricalMeasureFlow::from_marginals(grid, d, m, data)
}
