//! Binary snapshots and CSV step records.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::diagnostics::StepRecord;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::State;

pub const MAGIC: &[u8; 5] = b"NLPF1";
pub const VERSION: u8 = 1;

pub const CSV_COLUMNS: [&str; 8] = [
    "t",
    "total_energy",
    "total_entropy",
    "min_theta",
    "max_theta",
    "entropy_residual_min",
    "pairing_residual",
    "selection_margin",
];

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn fmt_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { file: path.display().to_string(), detail: detail.into() }
}

/// Header, then `θ`, then each `χ` component over all cells.
pub fn encode_snapshot(grid: &Grid, d: usize, s: &State) -> Vec<u8> {
    let m = grid.len();
    let mut buf = Vec::with_capacity(8 + 8 * grid.dim() + 8 + 8 * m * (1 + d));
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(grid.dim() as u8);
    buf.push(d as u8);
    for n in grid.cells_per_axis() {
        buf.extend_from_slice(&(*n as u64).to_le_bytes());
    }
    buf.extend_from_slice(&s.t.to_le_bytes());
    for v in &s.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in 0..d {
        for i in 0..m {
            buf.extend_from_slice(&s.chi[i * d + c].to_le_bytes());
        }
    }
    buf
}

/// Decoded snapshot with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub components: usize,
    pub cells: Vec<usize>,
    pub state: State,
}

pub fn decode_snapshot(path: &Path, bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < 8 || &bytes[..5] != MAGIC {
        return Err(fmt_err(path, "bad magic bytes"));
    }
    if bytes[5] != VERSION {
        return Err(fmt_err(path, format!("unsupported version {}", bytes[5])));
    }
    let dim = bytes[6] as usize;
    let d = bytes[7] as usize;
    if !(1..=2).contains(&dim) || d == 0 {
        return Err(fmt_err(path, format!("bad header: N = {dim}, d = {d}")));
    }
    let mut pos = 8;
    let word = |pos: &mut usize| -> Result<[u8; 8]> {
        let w = bytes.get(*pos..*pos + 8).ok_or_else(|| fmt_err(path, "truncated file"))?;
        *pos += 8;
        Ok(w.try_into().unwrap())
    };
    let mut cells = Vec::with_capacity(dim);
    for _ in 0..dim {
        cells.push(u64::from_le_bytes(word(&mut pos)?) as usize);
    }
    let m: usize = cells.iter().product();
    let t = f64::from_le_bytes(word(&mut pos)?);
    let expected = pos + 8 * m * (1 + d);
    if bytes.len() != expected {
        return Err(fmt_err(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut theta = Vec::with_capacity(m);
    for _ in 0..m {
        theta.push(f64::from_le_bytes(word(&mut pos)?));
    }
    let mut chi = vec![0.0; m * d];
    for c in 0..d {
        for i in 0..m {
            chi[i * d + c] = f64::from_le_bytes(word(&mut pos)?);
        }
    }
    Ok(Snapshot { dim, components: d, cells, state: State { t, theta, chi, xi: vec![0.0; m * d] } })
}

pub fn snapshot_name(index: usize) -> String {
    format!("snap_{index:06}.bin")
}

pub fn write_snapshot(path: &Path, grid: &Grid, d: usize, s: &State) -> Result<()> {
    fs::write(path, encode_snapshot(grid, d, s)).map_err(|e| io_err(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_snapshot(path, &bytes)
}

/// Snapshot files of a directory in index order.
pub fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("snap_") && n.ends_with(".bin"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Reads all snapshots of `dir` and checks they match `grid` and `d`.
pub fn read_trajectory(dir: &Path, grid: &Grid, d: usize) -> Result<Vec<State>> {
    let files = list_snapshots(dir)?;
    if files.is_empty() {
        return Err(fmt_err(dir, "no snapshot files"));
    }
    let mut out = Vec::with_capacity(files.len());
    for (k, f) in files.iter().enumerate() {
        let expected = dir.join(snapshot_name(k));
        if *f != expected {
            return Err(fmt_err(&expected, "missing snapshot"));
        }
        let s = read_snapshot(f)?;
        if s.dim != grid.dim() || s.cells != grid.cells_per_axis() || s.components != d {
            return Err(fmt_err(f, "snapshot does not match the configured grid"));
        }
        if let Some(prev) = out.last() {
            let p: &State = prev;
            if !(s.state.t > p.t) {
                return Err(fmt_err(f, "snapshot times are not increasing"));
            }
        }
        out.push(s.state);
    }
    Ok(out)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_records(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| fmt_err(path, e.to_string()))?;
    w.write_record(CSV_COLUMNS).map_err(|e| fmt_err(path, e.to_string()))?;
    for r in records {
        let row = [
            r.t,
            r.total_energy,
            r.total_entropy,
            r.min_theta,
            r.max_theta,
            r.entropy_residual_min,
            r.pairing_residual,
            r.selection_margin,
        ];
        w.write_record(row.iter().map(|v| fmt_f(*v))).map_err(|e| fmt_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads the eight CSV columns back.
pub fn read_records(path: &Path) -> Result<Vec<[f64; 8]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt_err(path, e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| fmt_err(path, e.to_string()))?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(fmt_err(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| fmt_err(path, e.to_string()))?;
        let mut v = [0.0; 8];
        for (k, field) in row.iter().enumerate().take(8) {
            v[k] = field.parse().map_err(|_| fmt_err(path, format!("bad number '{field}'")))?;
        }
        out.push(v);
    }
    Ok(out)
}

/// Writes a generic table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| fmt_err(path, e.to_string()))?;
    w.write_record(header).map_err(|e| fmt_err(path, e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| fmt_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Float formatting used in every CSV.
pub fn format_float(v: f64) -> String {
    fmt_f(v)
}
