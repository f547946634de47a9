//! CSV ingestion for paired observations (`id,y1,y2`).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::PairedObservation;

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Data {
            row: 1,
            message: format!("missing column '{name}' (expected header id,y1,y2)"),
        })
}

fn parse_value(raw: &str, name: &str, row: usize, log_transform: bool) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Data {
            row,
            message: format!("missing value for {name}"),
        });
    }
    let v: f64 = trimmed.parse().map_err(|_| Error::Data {
        row,
        message: format!("cannot parse {name} value '{trimmed}'"),
    })?;
    let v = if log_transform {
        if v <= 0.0 {
            return Err(Error::Data {
                row,
                message: format!("raw intensity {name} = {v} must be positive"),
            });
        }
        v.ln()
    } else {
        v
    };
    if !v.is_finite() {
        return Err(Error::Data {
            row,
            message: format!("non-finite {name} value '{trimmed}'"),
        });
    }
    Ok(v)
}

/// Reads pairs from CSV. `log_transform` takes the natural log of raw
/// intensities. Error rows are 1-based file line numbers.
pub fn read_pairs<R: Read>(reader: R, log_transform: bool) -> Result<Vec<PairedObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let (ci, c1, c2) = (column(&headers, "id")?, column(&headers, "y1")?, column(&headers, "y2")?);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let fallback_row = k + 2;
        let rec = rec.map_err(|e| Error::Data {
            row: e.position().map_or(fallback_row, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(fallback_row, |p| p.line() as usize);
        let get = |idx: usize, name: &str| {
            rec.get(idx).ok_or_else(|| Error::Data {
                row,
                message: format!("missing field {name}"),
            })
        };
        let id = get(ci, "id")?.trim().to_string();
        let y1 = parse_value(get(c1, "y1")?, "y1", row, log_transform)?;
        let y2 = parse_value(get(c2, "y2")?, "y2", row, log_transform)?;
        out.push(PairedObservation { id, y1, y2 });
    }
    Ok(out)
}

pub fn read_pairs_path(path: &Path, log_transform: bool) -> Result<Vec<PairedObservation>> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_pairs(f, log_transform)
}

/// Reads latent means for resampling scenarios: either a single `mu` column or
/// a pair file, in which case the pair means are used.
pub fn read_means_path(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or_default();
    if first.split(',').any(|h| h.trim() == "y1") {
        return Ok(read_pairs(text.as_bytes(), false)?
            .iter()
            .map(|p| 0.5 * (p.y1 + p.y2))
            .collect());
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Data { row: 1, message: e.to_string() })?.clone();
    let c = column(&headers, "mu")?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Data { row, message: e.to_string() })?;
        out.push(parse_value(rec.get(c).unwrap_or(""), "mu", row, false)?);
    }
    Ok(out)
}
