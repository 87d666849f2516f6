//! Perpendicular-beam parameter grids. Every point starts from the same
//! equilibrium, thermal state and seed, so points differ only in the beam.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{perp_beam, ExperimentSpec};
use crate::harness::pipeline::{run_cooling, CoolingRecord, CoolingRun};
use crate::model::{SystemState, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    /// rad/s
    pub perp_detuning: f64,
    /// m
    pub perp_offset: f64,
    pub t_pe: f64,
    pub t_ke_perp: f64,
    pub t_ke_par: f64,
    pub equilibrated: bool,
    pub failure: Option<String>,
}

impl ScanRow {
    fn from_record(perp_detuning: f64, perp_offset: f64, rec: &CoolingRecord) -> Self {
        let (t_pe, t_ke_perp, t_ke_par) = rec
            .samples
            .last()
            .map_or((f64::NAN, f64::NAN, f64::NAN), |s| (s.t_pe, s.t_ke_perp, s.t_ke_par));
        ScanRow {
            perp_detuning,
            perp_offset,
            t_pe,
            t_ke_perp,
            t_ke_par,
            equilibrated: rec.equilibrated,
            failure: rec.failure.clone(),
        }
    }
}

/// Cools from (`reference`, `initial`) at every (detuning, offset) pair of
/// the experiment's grid. Rows come back sorted by detuning, then offset, so the
/// table does not depend on the grid order. Per-point failures are recorded
/// in their rows.
pub fn run_scan(spec: &ExperimentSpec, reference: &[Vec3], initial: &SystemState) -> Result<Vec<ScanRow>> {
    let grid = spec
        .scan
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("experiment has no [scan] section".into()))?;
    let n_steps = (grid.duration / spec.sim.dt).round() as u64;
    let mut points: Vec<(f64, f64)> = grid
        .perp_detuning
        .iter()
        .flat_map(|&d| grid.perp_offset.iter().map(move |&o| (d, o)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();

    points
        .par_iter()
        .map(|&(detuning, offset)| {
            let mut beams = spec.beams.clone();
            beams.beams.retain(|b| b.is_uniform());
            beams.beams.push(perp_beam(&spec.file.beams.perp, detuning, offset)?);
            let row = match CoolingRun::new(spec, beams, reference, initial, n_steps).and_then(|run| run_cooling(run, spec, None)) {
                Ok((rec, _)) => ScanRow::from_record(detuning, offset, &rec),
                Err(e) => ScanRow {
                    perp_detuning: detuning,
                    perp_offset: offset,
                    t_pe: f64::NAN,
                    t_ke_perp: f64::NAN,
                    t_ke_par: f64::NAN,
                    equilibrated: false,
                    failure: Some(e.to_string()),
                },
            };
            Ok(row)
        })
        .collect()
}

/// CSV with detuning in Hz, offset in um and temperatures in mK.
pub fn write_scan_table<W: Write>(out: W, rows: &[ScanRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "perp_detuning_hz",
        "perp_offset_um",
        "T_pe_mK",
        "T_ke_perp_mK",
        "T_ke_par_mK",
        "equilibrated",
        "failure",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            (r.perp_detuning / (2.0 * PI)).to_string(),
            (r.perp_offset * 1e6).to_string(),
            (r.t_pe * 1e3).to_string(),
            (r.t_ke_perp * 1e3).to_string(),
            (r.t_ke_par * 1e3).to_string(),
            r.equilibrated.to_string(),
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
