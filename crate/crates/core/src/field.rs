//! Space-time fields produced by the solver, with CSV and JSON output.
//!
//! CSV layout: the first row holds the x-coordinates; each following row is
//! one time level, ordered from `t = T` down to `t = 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::hjb::BoundaryMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub scheme: String,
    pub dt: f64,
    pub cfl_dt: f64,
    pub boundary_mode: BoundaryMode,
    pub n_controls: usize,
}

/// `values[i][j] ≈ v(times[i], xs[j])` with `times` ascending from 0 to T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub meta: FieldMeta,
}

/// Maximizing control per lattice node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub f_star: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("at least one time level")
    }

    /// Row at `t = 0`.
    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("at least one time level")
    }

    /// Linear interpolation of row `i` at `x`, clamped to the grid.
    pub fn interpolate(&self, i: usize, x: f64) -> f64 {
        interpolate(&self.xs, &self.values[i], x)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_rows(out, &self.xs, &self.values)
    }
}

impl PolicyField {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_rows(out, &self.xs, &self.f_star)
    }
}

pub fn interpolate(xs: &[f64], values: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return values[0];
    }
    if x >= xs[n - 1] {
        return values[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

fn write_rows<W: Write>(out: W, xs: &[f64], rows: &[Vec<f64>]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(xs.iter().map(|v| v.to_string()))?;
    for row in rows.iter().rev() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
