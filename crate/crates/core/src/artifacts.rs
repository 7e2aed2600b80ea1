//! CSV and JSON artifact formats.
//!
//! Every numeric CSV carries a header row and writes floats with 17 significant
//! digits so that values round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fokker_planck::{DensityField, FieldKind, PdeGrid};
use crate::km::BinnedMoments;
use crate::sim::IncrementPairs;
use crate::ssr::DegreeScan;
use crate::transition_path::TransitionPath;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

pub type ArtifactResult<T> = std::result::Result<T, ArtifactError>;

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Csv { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> ArtifactError {
    ArtifactError::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn writer(path: &Path) -> ArtifactResult<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().flexible(true).from_writer(BufWriter::new(file)))
}

fn reader(path: &Path) -> ArtifactResult<csv::Reader<File>> {
    csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(csv_err(path))
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<File>, want: &[&str]) -> ArtifactResult<()> {
    let got = rdr.headers().map_err(csv_err(path))?;
    if got.iter().ne(want.iter().copied()) {
        return Err(format_err(path, format!("expected header {want:?}, found {got:?}")));
    }
    Ok(())
}

fn parse(path: &Path, s: &str) -> ArtifactResult<f64> {
    s.trim().parse().map_err(|_| format_err(path, format!("bad number {s:?}")))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> ArtifactResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_pairs_csv(path: &Path, pairs: &IncrementPairs) -> ArtifactResult<()> {
    let dt = fmt_f64(pairs.delta_t);
    write_rows(
        path,
        &["x", "dx", "delta_t"],
        pairs.x.iter().zip(&pairs.dx).map(|(x, d)| vec![fmt_f64(*x), fmt_f64(*d), dt.clone()]),
    )
}

pub fn read_pairs_csv(path: &Path) -> ArtifactResult<IncrementPairs> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, &["x", "dx", "delta_t"])?;
    let (mut x, mut dx) = (Vec::new(), Vec::new());
    let mut delta_t: Option<f64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 3 {
            return Err(format_err(path, "pair rows need 3 fields"));
        }
        x.push(parse(path, &rec[0])?);
        dx.push(parse(path, &rec[1])?);
        let dt = parse(path, &rec[2])?;
        match delta_t {
            None => delta_t = Some(dt),
            Some(prev) if prev != dt => return Err(format_err(path, "delta_t varies across rows")),
            _ => {}
        }
    }
    let delta_t = delta_t.ok_or_else(|| format_err(path, "no pairs"))?;
    IncrementPairs::new(x, dx, delta_t).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_bins_csv(path: &Path, bins: &BinnedMoments) -> ArtifactResult<()> {
    write_rows(
        path,
        &["center", "count", "y1", "y2"],
        (0..bins.len()).map(|j| {
            vec![fmt_f64(bins.centers[j]), bins.counts[j].to_string(), fmt_f64(bins.y1[j]), fmt_f64(bins.y2[j])]
        }),
    )
}

/// Reads `bins.csv`. The lag is not part of the format, so `delta_t` is NaN
/// and `dropped` is zero.
pub fn read_bins_csv(path: &Path) -> ArtifactResult<BinnedMoments> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, &["center", "count", "y1", "y2"])?;
    let mut b =
        BinnedMoments { centers: vec![], y1: vec![], y2: vec![], counts: vec![], delta_t: f64::NAN, dropped: 0 };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 4 {
            return Err(format_err(path, "bin rows need 4 fields"));
        }
        b.centers.push(parse(path, &rec[0])?);
        b.counts.push(rec[1].trim().parse().map_err(|_| format_err(path, "bad count"))?);
        b.y1.push(parse(path, &rec[2])?);
        b.y2.push(parse(path, &rec[3])?);
    }
    if b.is_empty() {
        return Err(format_err(path, "no bins"));
    }
    Ok(b)
}

/// `target,degree,q,delta` rows for each scanned degree and sparsity level.
pub fn write_cv_scan_csv(path: &Path, scans: &[(&str, &DegreeScan)]) -> ArtifactResult<()> {
    let mut rows = Vec::new();
    for (target, scan) in scans {
        for e in &scan.entries {
            for (q, d) in e.report.delta.iter().enumerate() {
                rows.push(vec![target.to_string(), e.degree.to_string(), q.to_string(), fmt_f64(*d)]);
            }
        }
    }
    write_rows(path, &["target", "degree", "q", "delta"], rows)
}

/// First row `x,x_1,...,x_n`; then one `t,v_1,...,v_n` row per time level.
pub fn write_field_csv(path: &Path, field: &DensityField) -> ArtifactResult<()> {
    let grid = &field.grid;
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("x".to_string()).chain(grid.nodes().into_iter().map(fmt_f64)).collect();
    w.write_record(&header).map_err(csv_err(path))?;
    for (m, level) in field.levels().enumerate() {
        let row: Vec<String> =
            std::iter::once(fmt_f64(grid.time(m))).chain(level.iter().map(|v| fmt_f64(*v))).collect();
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a field written by [`write_field_csv`] and checks it against `grid`.
pub fn read_field_csv(path: &Path, grid: &PdeGrid, kind: FieldKind) -> ArtifactResult<DensityField> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    let mut records = rdr.records();
    let head = records.next().ok_or_else(|| format_err(path, "empty field file"))?.map_err(csv_err(path))?;
    if head.len() != grid.n_x + 1 || &head[0] != "x" {
        return Err(format_err(path, "first row must be the x-grid"));
    }
    for (j, s) in head.iter().skip(1).enumerate() {
        let x = parse(path, s)?;
        if (x - grid.node(j)).abs() > 1e-12 * (1.0 + x.abs()) {
            return Err(format_err(path, format!("x-grid mismatch at column {j}")));
        }
    }
    let mut levels = Vec::with_capacity(grid.n_t + 1);
    for rec in records {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != grid.n_x + 1 {
            return Err(format_err(path, "field row has the wrong width"));
        }
        levels.push(rec.iter().skip(1).map(|s| parse(path, s)).collect::<ArtifactResult<Vec<_>>>()?);
    }
    DensityField::from_levels(*grid, kind, levels).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_path_csv(path: &Path, p: &TransitionPath) -> ArtifactResult<()> {
    write_rows(
        path,
        &["t", "x_m", "peak_density"],
        (0..p.t.len()).map(|m| vec![fmt_f64(p.t[m]), fmt_f64(p.x_m[m]), fmt_f64(p.peak_density[m])]),
    )
}

pub fn read_path_csv(path: &Path) -> ArtifactResult<TransitionPath> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, &["t", "x_m", "peak_density"])?;
    let mut p = TransitionPath { t: vec![], x_m: vec![], peak_density: vec![], tie_levels: vec![] };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        p.t.push(parse(path, &rec[0])?);
        p.x_m.push(parse(path, &rec[1])?);
        p.peak_density.push(parse(path, &rec[2])?);
    }
    Ok(p)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> ArtifactResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> ArtifactResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> ArtifactResult<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
