//! CSV ingestion and lossless numeric output.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hdmt::model::{CovMatrix, Sample};
use nalgebra::DMatrix;

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Rows of numbers from comma-separated text. A first row containing any
/// non-numeric cell is taken as a header and skipped.
pub fn read_table<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.context("malformed CSV")?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(parse_cell).collect();
        if idx == 0 && parsed.iter().any(Option::is_none) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            bail!("line {line}: expected {expected} fields, found {}", record.len());
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, (v, raw)) in parsed.into_iter().zip(record.iter()).enumerate() {
            match v {
                Some(v) if v.is_finite() => row.push(v),
                _ => bail!("line {line}, column {}: not a finite number: {raw:?}", col + 1),
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("no data rows");
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    let rows = read_table(open(path)?).with_context(|| path.display().to_string())?;
    Ok(Sample::from_rows(&rows)?)
}

/// A square PSD matrix from CSV.
pub fn read_cov(path: &Path) -> Result<CovMatrix> {
    let rows = read_table(open(path)?).with_context(|| path.display().to_string())?;
    let d = rows.len();
    if rows[0].len() != d {
        bail!(
            "{}: covariance must be square, got {d}x{}",
            path.display(),
            rows[0].len()
        );
    }
    let m = DMatrix::from_row_iterator(d, d, rows.into_iter().flatten());
    CovMatrix::new(m).map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn write_sample<W: Write>(s: &Sample, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in s.rows() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to `path`, or standard output when absent.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot write {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}
