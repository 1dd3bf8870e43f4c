use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::record::{Dataset, MeasurementType, Record};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["node_id", "measurement_type", "time_min", "value", "mask"];

/// One row per (record, grid time). Unobserved values are written empty.
pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &ds.records {
        let node = r.node_id.to_string();
        let kind = r.kind.to_string();
        for ((t, v), &m) in r.times.iter().zip(&r.values).zip(&r.mask) {
            let value = if m { v.to_string() } else { String::new() };
            w.write_record([
                node.as_str(),
                kind.as_str(),
                &t.to_string(),
                &value,
                if m { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_dataset`]. Records appear in first-seen order.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut rows = rdr.records();
    match rows.next() {
        None => return Ok(Dataset::default()),
        Some(header) => {
            let header = header?;
            if header.iter().ne(CSV_HEADER) {
                return Err(Error::Schema(format!(
                    "expected header {:?}, got {:?}",
                    CSV_HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
    }
    struct Builder {
        node_id: usize,
        kind: MeasurementType,
        times: Vec<f64>,
        values: Vec<f64>,
        mask: Vec<bool>,
    }
    let mut builders: Vec<Builder> = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse { line, msg };
        if row.len() != CSV_HEADER.len() {
            return Err(perr(format!(
                "expected {} fields, got {}",
                CSV_HEADER.len(),
                row.len()
            )));
        }
        let node_id: usize = row[0].parse().map_err(|e| perr(format!("node_id: {e}")))?;
        let kind: MeasurementType = row[1].parse().map_err(|e: Error| perr(e.to_string()))?;
        let time: f64 = row[2].parse().map_err(|e| perr(format!("time_min: {e}")))?;
        let mask = match &row[4] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Schema(format!(
                    "line {line}: mask must be 0 or 1, got {other:?}"
                )))
            }
        };
        let value = match (mask, &row[3]) {
            (false, "") => f64::NAN,
            (false, _) => {
                return Err(Error::Schema(format!(
                    "line {line}: value present with mask 0"
                )))
            }
            (true, "") => {
                return Err(Error::Schema(format!(
                    "line {line}: value missing with mask 1"
                )))
            }
            (true, v) => v.parse().map_err(|e| perr(format!("value: {e}")))?,
        };
        let b = match builders
            .iter_mut()
            .position(|b| b.node_id == node_id && b.kind == kind)
        {
            Some(i) => &mut builders[i],
            None => {
                builders.push(Builder {
                    node_id,
                    kind,
                    times: Vec::new(),
                    values: Vec::new(),
                    mask: Vec::new(),
                });
                builders.last_mut().expect("just pushed")
            }
        };
        b.times.push(time);
        b.values.push(value);
        b.mask.push(mask);
    }
    let records = builders
        .into_iter()
        .map(|b| Record::new(b.node_id, b.kind, b.times, b.values, b.mask))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_dataset(ds, BufWriter::new(f))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = File::open(path)?;
    read_dataset(BufReader::new(f))
}
