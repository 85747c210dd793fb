//! Sample file formats.
//!
//! CSV: a comment line `# sf-sampler v<semver> seed=<s> target=<name>`, a
//! column line `y1,...,yd`, then one row per path.
//!
//! Binary: one JSON header line terminated by `\n`, followed by
//! `rows * dim` little-endian `f64` values in row-major order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Ensemble;
use crate::scalar::Scalar;

pub const BINARY_FORMAT_TAG: &str = "sf-sampler-bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub target: String,
    pub rows: usize,
    pub dim: usize,
    pub dtype: String,
    pub endian: String,
}

pub fn write_samples_csv<F: Scalar, W: Write>(out: &mut W, ensemble: &Ensemble<F>, version: &str) -> Result<()> {
    writeln!(out, "# sf-sampler v{version} seed={} target={}", ensemble.config.master_seed, ensemble.target_name)?;
    let cols: Vec<String> = (1..=ensemble.dim).map(|i| format!("y{i}")).collect();
    writeln!(out, "{}", cols.join(","))?;
    let mut line = String::new();
    for row in ensemble.terminal.chunks_exact(ensemble.dim) {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            // shortest representation that round-trips
            line.push_str(&format!("{:?}", v.to_f64_lossy()));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a sample CSV; returns `(dim, row-major values)`.
pub fn read_samples_csv<R: BufRead>(input: R) -> Result<(usize, Vec<f64>)> {
    let mut dim = None;
    let mut values = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if dim.is_none() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.iter().enumerate().any(|(i, c)| *c != format!("y{}", i + 1)) {
                return Err(Error::Format(format!("line {}: expected y1,...,yd header", lineno + 1)));
            }
            dim = Some(cols.len());
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 =
                field.parse().map_err(|_| Error::Format(format!("line {}: bad number `{field}`", lineno + 1)))?;
            values.push(v);
        }
        if values.len() - before != dim.unwrap() {
            return Err(Error::Format(format!("line {}: wrong column count", lineno + 1)));
        }
    }
    let dim = dim.ok_or_else(|| Error::Format("missing column header".into()))?;
    Ok((dim, values))
}

pub fn write_samples_binary<F: Scalar, W: Write>(out: &mut W, ensemble: &Ensemble<F>, version: &str) -> Result<()> {
    let header = BinaryHeader {
        format: BINARY_FORMAT_TAG.to_string(),
        version: version.to_string(),
        seed: ensemble.config.master_seed,
        target: ensemble.target_name.clone(),
        rows: ensemble.len(),
        dim: ensemble.dim,
        dtype: "f64".to_string(),
        endian: "little".to_string(),
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(json.as_bytes())?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(ensemble.terminal.len() * 8);
    for v in &ensemble.terminal {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_samples_binary<R: BufRead>(mut input: R) -> Result<(BinaryHeader, Vec<f64>)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: BinaryHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.format != BINARY_FORMAT_TAG || header.dtype != "f64" || header.endian != "little" {
        return Err(Error::Format("unsupported binary sample layout".into()));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != header.rows * header.dim * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            header.rows * header.dim * 8,
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}
