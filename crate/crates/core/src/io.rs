//! Data matrices and result tables.
//!
//! A data matrix has one row per sample (time step) and one column per
//! observed dimension. Two on-disk formats are supported:
//!
//! * CSV: plain numeric rows, no header, comma separated.
//! * Binary: three little-endian `u64` (rows, columns, [`BIN_MAGIC`])
//!   followed by `rows · columns` little-endian `f64` in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeKind, NodeState};
use crate::network::Network;
use crate::scalar::Real;

/// Magic number closing the binary header: the bytes `BBDATA01`.
pub const BIN_MAGIC: u64 = u64::from_le_bytes(*b"BBDATA01");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Bin,
}

impl DataFormat {
    /// `.bin` means binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => DataFormat::Bin,
            _ => DataFormat::Csv,
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch { what: "matrix values".into(), expected: rows * cols, got: values.len() });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch { what: format!("row {i}"), expected: cols, got: r.len() });
            }
            values.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, values })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column<T: Real>(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| T::lit(self.get(r, c))).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: `{f}`: {e}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse("empty data file".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in 0..self.rows {
            w.write_record(self.row(r).iter().map(|v| format!("{v:e}"))).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_bin<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; 24];
        reader.read_exact(&mut header).map_err(|_| Error::Parse("binary header truncated".into()))?;
        let word = |k: usize| u64::from_le_bytes(header[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        if word(2) != BIN_MAGIC {
            return Err(Error::Parse("bad magic number in binary data".into()));
        }
        let (rows, cols) = (word(0) as usize, word(1) as usize);
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Parse("matrix size overflows".into()))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * n {
            return Err(Error::DimensionMismatch { what: "binary payload bytes".into(), expected: 8 * n, got: bytes.len() });
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { rows, cols, values })
    }

    pub fn write_bin<W: Write>(&self, mut writer: W) -> Result<()> {
        for w in [self.rows as u64, self.cols as u64, BIN_MAGIC] {
            writer.write_all(&w.to_le_bytes())?;
        }
        for v in &self.values {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        match DataFormat::from_path(path) {
            DataFormat::Csv => Self::read_csv(std::io::BufReader::new(file)),
            DataFormat::Bin => Self::read_bin(std::io::BufReader::new(file)),
        }
    }

    pub fn to_bytes(&self, format: DataFormat) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        match format {
            DataFormat::Csv => self.write_csv(&mut buf)?,
            DataFormat::Bin => self.write_bin(&mut buf)?,
        }
        Ok(buf)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// One row of a cost trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    pub total_nats: f64,
    pub bits_per_sample: f64,
    pub n_nodes: usize,
}

pub fn write_cost_trace<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior summaries, one row per node and sample:
/// `label,t,family,mean,var`. Mixtures report their Gaussian value,
/// rectified nodes their truncated moments and Dirichlet nodes one row per
/// component (`t` is the component, `mean` the expected weight).
pub fn write_posteriors<T: Real, W: Write>(writer: W, net: &Network<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "t", "family", "mean", "var"]).map_err(csv_io)?;
    let g = net.graph();
    for (id, n) in g.nodes() {
        if !n.is_updatable() {
            continue;
        }
        let family = match (&n.state, n.kind) {
            (NodeState::Dirichlet(d), _) => {
                let total: f64 = d.counts.iter().map(|c| c.as_f64()).sum();
                for (k, c) in d.counts.iter().enumerate() {
                    let a = c.as_f64();
                    let var = a * (total - a) / (total * total * (total + 1.0));
                    w.write_record([n.label.clone(), k.to_string(), "dirichlet".into(), fmt(a / total), fmt(var)])
                        .map_err(csv_io)?;
                }
                continue;
            }
            (_, NodeKind::RectifiedGaussian) => "rectified",
            (_, NodeKind::MixtureOfGaussians) => "mixture",
            _ => "gaussian",
        };
        for (t, s) in net.stats(id).iter().enumerate() {
            w.write_record([n.label.clone(), t.to_string(), family.into(), fmt(s.mean.as_f64()), fmt(s.var.as_f64())])
                .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}
