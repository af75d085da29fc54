//! CSV and JSON artifacts. Floats are written with Rust's shortest round-trip
//! formatting, so equal values always produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::TrajectoryRecord;
use crate::gauge::GaugeReport;

/// A numeric table with named columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV with a header row and numeric cells.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        Error::Domain(format!(
                            "{}: row {}: '{cell}' is not a number",
                            path.display(),
                            line + 1
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }
}

/// `x0, x1, …` column names.
pub fn coordinate_header(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}{i}")).collect()
}

/// One point per row with columns x0..x{D-1}.
pub fn points_table(points: &[DVector<f64>], dim: usize) -> Table {
    let mut t = Table::new(coordinate_header("x", dim));
    for p in points {
        t.push(p.iter().copied().collect());
    }
    t
}

/// Reads points written by [`points_table`], or any all-numeric CSV.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(Table::read_csv(path)?.rows)
}

/// Checkpointed states of several trajectories: trajectory, t, x0.., and logdet when recorded.
pub fn trajectories_table(records: &[TrajectoryRecord]) -> Table {
    let dim = records.first().map_or(0, TrajectoryRecord::dim);
    let with_logdet = records.first().is_some_and(|r| r.logdet.is_some());
    let mut header = vec!["trajectory".to_string(), "t".to_string()];
    header.extend(coordinate_header("x", dim));
    if with_logdet {
        header.push("logdet".to_string());
    }
    let mut table = Table::new(header);
    for (k, rec) in records.iter().enumerate() {
        for (i, (t, x)) in rec.times.iter().zip(&rec.states).enumerate() {
            let mut row = vec![k as f64, *t];
            row.extend(x.iter());
            if let Some(l) = rec.logdet.as_ref().filter(|_| with_logdet) {
                row.push(l[i]);
            }
            table.push(row);
        }
    }
    table
}

pub fn gauge_table(reports: &[GaugeReport]) -> Table {
    let mut t = Table::new(["t", "residual_max", "residual_rms", "n_points"]);
    for r in reports {
        t.push(vec![r.t, r.residual_max, r.residual_rms, r.n_points as f64]);
    }
    t
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
