//! Per-iteration traces shared by every driver.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stein::ParticleSet;

/// One row per iteration. Row `0` describes the initial particle set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub gradient_magnitude: f64,
    /// Trust-region radius or step size used to produce this row.
    pub radius_or_step: Option<f64>,
    pub rho: Option<f64>,
    pub approx_kl_u: Option<f64>,
    pub approx_kl_o: Option<f64>,
    pub accepted: bool,
    /// Milliseconds since the start of the run.
    pub wall_ms: Option<f64>,
    /// AdaTrust scale `b` after the update.
    #[serde(skip)]
    pub scale: Option<f64>,
}

impl TraceRow {
    pub(crate) fn initial(
        gradient_magnitude: f64,
        radius_or_step: Option<f64>,
        wall_ms: f64,
    ) -> Self {
        TraceRow {
            iteration: 0,
            gradient_magnitude,
            radius_or_step,
            rho: None,
            approx_kl_u: None,
            approx_kl_o: None,
            accepted: true,
            wall_ms: Some(wall_ms),
            scale: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Free-form remarks about unusual driver states.
    pub notes: Vec<String>,
}

impl Trace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn gradient_magnitudes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gradient_magnitude).collect()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Writes the CSV trace. Timing cells stay empty unless `with_timings`.
    pub fn write_csv(&self, path: &Path, with_timings: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        if self.rows.is_empty() {
            w.write_record([
                "iteration",
                "gradient_magnitude",
                "radius_or_step",
                "rho",
                "approx_kl_u",
                "approx_kl_o",
                "accepted",
                "wall_ms",
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        for row in &self.rows {
            let mut row = row.clone();
            if !with_timings {
                row.wall_ms = None;
            }
            w.serialize(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Trace> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(|e| csv_error(path, e))?;
        Ok(Trace {
            rows,
            notes: vec![],
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Final particles of a run together with its trace.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub particles: ParticleSet,
    pub trace: Trace,
    /// True when the run stopped early on an exactly zero gradient.
    pub converged: bool,
}
