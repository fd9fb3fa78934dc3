//! Trace CSV and JSON artifacts.
//!
//! Floats are written in shortest round-trip form, so a trace read back
//! from disk is bit-identical to the one that was written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::klrates::Figure1Cell;
use crate::types::TraceRecord;

#[derive(Serialize, Deserialize)]
struct Row {
    n: usize,
    f: f64,
    grad_sq_norm: f64,
    #[serde(rename = "H")]
    h: f64,
    step_min: f64,
    step_max: f64,
    p_sq_norm: f64,
    dx_norm: f64,
    inner_a_p_sq: f64,
}

impl From<&TraceRecord> for Row {
    fn from(r: &TraceRecord) -> Self {
        Row {
            n: r.n,
            f: r.f_val,
            grad_sq_norm: r.grad_sq_norm,
            h: r.lyapunov_h,
            step_min: r.step_min,
            step_max: r.step_max,
            p_sq_norm: r.p_sq_norm,
            dx_norm: r.dx_norm,
            inner_a_p_sq: r.inner_a_p_sq,
        }
    }
}

impl From<Row> for TraceRecord {
    fn from(r: Row) -> Self {
        TraceRecord {
            n: r.n,
            f_val: r.f,
            grad_sq_norm: r.grad_sq_norm,
            lyapunov_h: r.h,
            step_min: r.step_min,
            step_max: r.step_max,
            p_sq_norm: r.p_sq_norm,
            dx_norm: r.dx_norm,
            inner_a_p_sq: r.inner_a_p_sq,
        }
    }
}

pub fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(Row::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| Ok(TraceRecord::from(row?)))
        .collect()
}

/// `k, f, gap` rows of one toy-experiment cell.
pub fn write_series_csv(path: &Path, cell: &Figure1Cell) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "f", "gap"])?;
    for (k, f, gap) in cell.series() {
        w.serialize((k, f, gap))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let records: Vec<TraceRecord> = (0..50)
            .map(|i| {
                let x = (i as f64 + 0.1).powf(-3.7) * std::f64::consts::PI;
                TraceRecord {
                    n: i,
                    f_val: x,
                    grad_sq_norm: x * 1e-300,
                    lyapunov_h: x + 1.0 / 3.0,
                    step_min: 1e-3 / 1.1,
                    step_max: 1.695_947_123_456_789,
                    p_sq_norm: 0.1 + 0.2,
                    dx_norm: if i == 0 { 0.0 } else { x.sqrt() },
                    inner_a_p_sq: f64::MIN_POSITIVE * i as f64,
                }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace_csv(&path, &records).unwrap();
        assert_eq!(read_trace_csv(&path).unwrap(), records);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("n,f,grad_sq_norm,H,step_min,step_max,p_sq_norm,dx_norm"));
    }
}
