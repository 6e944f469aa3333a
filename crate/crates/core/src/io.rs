//! File formats.
//!
//! Matrices are stored as a 16-byte header followed by little-endian `f64`
//! entries in column-major order. The header is the magic `SDCT`, the row
//! count and the column count as little-endian `u32`, and a `u32` that must be
//! zero. Small matrices can also be written as CSV, one matrix row per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdctError};
use crate::geometry::{GridRow, SampleCertificate};
use crate::harness::csv_error;
use crate::trm::TrmResult;

pub const MAGIC: &[u8; 4] = b"SDCT";
pub const HEADER_LEN: usize = 16;

pub fn write_matrix<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| SdctError::InvalidShape("too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| SdctError::InvalidShape("too many columns".into()))?;
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&rows.to_le_bytes());
    header[8..12].copy_from_slice(&cols.to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(8 * m.len());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|e| SdctError::Format(format!("truncated header: {e}")))?;
    if &header[..4] != MAGIC {
        return Err(SdctError::Format("bad magic, expected SDCT".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let (rows, cols, reserved) = (word(4) as usize, word(8) as usize, word(12));
    if reserved != 0 {
        return Err(SdctError::Format(format!("reserved header word is {reserved}, expected 0")));
    }
    let len = rows
        .checked_mul(cols)
        .and_then(|l| l.checked_mul(8))
        .ok_or_else(|| SdctError::Format("matrix size overflows".into()))?;
    let mut body = Vec::with_capacity(len);
    input.take(len as u64).read_to_end(&mut body)?;
    if body.len() != len {
        return Err(SdctError::Format(format!(
            "expected {len} bytes of entries for {rows}x{cols}, found {}",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(m, BufWriter::new(File::create(path)?))
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

/// A vector stored as a matrix with one column.
pub fn load_vector(path: &Path) -> Result<DVector<f64>> {
    let m = load_matrix(path)?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(SdctError::InvalidShape(format!(
            "expected a vector, found a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Comma-separated entries, one matrix row per line.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| SdctError::Format(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(SdctError::Format(format!(
            "row {i} has {} fields, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Writes `iter,f,delta,rho,step_norm,accepted`, one line per iteration.
pub fn write_trace_csv<W: Write>(result: &TrmResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "f", "delta", "rho", "step_norm", "accepted"]).map_err(csv_error)?;
    for (i, r) in result.iterates.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.f.to_string(),
            r.delta.to_string(),
            r.rho.to_string(),
            r.step_norm.to_string(),
            r.accepted.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `region,sample_idx,norm_w,certificate,pass`.
pub fn write_certificates_csv<W: Write>(rows: &[SampleCertificate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region", "sample_idx", "norm_w", "certificate", "pass"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.region.name().to_string(),
            r.sample_idx.to_string(),
            r.norm_w.to_string(),
            r.certificate.to_string(),
            r.pass.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `w1,w2,g`.
pub fn write_grid_csv<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
