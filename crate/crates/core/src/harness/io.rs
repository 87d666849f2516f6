//! On-disk formats: the temperature time series (CSV), state snapshots
//! (columnar little-endian f64 plus a JSON sidecar) and mode tables (CSV).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::TemperatureSample;
use crate::error::{Error, Result};
use crate::model::{Frame, SystemState, Vec3};
use crate::modes::ModeSet;

pub const TIMESERIES_HEADER: [&str; 4] = ["t_s", "T_pe_mK", "T_ke_perp_mK", "T_ke_par_mK"];

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Corrupt(format!("{other:?}")),
    }
}

pub fn write_timeseries<W: Write>(out: W, samples: &[TemperatureSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMESERIES_HEADER).map_err(csv_error)?;
    for s in samples {
        w.write_record([
            s.t.to_string(),
            (s.t_pe * 1e3).to_string(),
            (s.t_ke_perp * 1e3).to_string(),
            (s.t_ke_par * 1e3).to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timeseries(path: &Path) -> Result<Vec<TemperatureSample>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(TIMESERIES_HEADER) {
        return Err(Error::Corrupt(format!("unexpected time-series header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error)?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Corrupt(format!("bad time-series field {i} in {rec:?}")))
            };
            Ok(TemperatureSample {
                t: f(0)?,
                t_pe: f(1)? * 1e-3,
                t_ke_perp: f(2)? * 1e-3,
                t_ke_par: f(3)? * 1e-3,
            })
        })
        .collect()
}

/// Metadata written next to every snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub n_ions: usize,
    pub time: f64,
    pub frame: Frame,
    pub label: String,
    pub spec_hash: String,
    pub seed: u64,
    pub code_version: String,
}

/// Columnar layout: N as u64, then x, y, z, vx, vy, vz each as N f64.
pub fn encode_state(state: &SystemState) -> Vec<u8> {
    let n = state.n_ions();
    let mut buf = Vec::with_capacity(8 + 48 * n);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for column in 0..6 {
        for i in 0..n {
            let v = if column < 3 {
                state.positions[i][column]
            } else {
                state.velocities[i][column - 3]
            };
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_state(bytes: &[u8], time: f64, frame: Frame) -> Result<SystemState> {
    let head: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Corrupt("snapshot shorter than its header".into()))?;
    let n = u64::from_le_bytes(head) as usize;
    if n == 0 || bytes.len() != 8 + 48 * n {
        return Err(Error::Corrupt(format!("snapshot of {} bytes cannot hold {n} ions", bytes.len())));
    }
    let value = |column: usize, i: usize| {
        let at = 8 + 8 * (column * n + i);
        f64::from_le_bytes(bytes[at..at + 8].try_into().expect("length checked"))
    };
    let positions = (0..n).map(|i| Vec3::new(value(0, i), value(1, i), value(2, i))).collect();
    let velocities = (0..n).map(|i| Vec3::new(value(3, i), value(4, i), value(5, i))).collect();
    SystemState::new(positions, velocities, time, frame)
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<path>` (binary) and `<path>.json` (metadata, with the `.bin`
/// extension swapped).
pub fn write_snapshot(path: &Path, state: &SystemState, meta: &SnapshotMeta) -> Result<()> {
    fs::write(path, encode_state(state))?;
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(SystemState, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)
        .map_err(|e| Error::Corrupt(format!("snapshot metadata: {e}")))?;
    let state = decode_state(&fs::read(path)?, meta.time, meta.frame)?;
    if state.n_ions() != meta.n_ions {
        return Err(Error::Corrupt("snapshot and metadata disagree on N".into()));
    }
    Ok((state, meta))
}

/// One row per mode: index, freq_hz, f_z, R_n, branch.
pub fn write_mode_table<W: Write>(out: W, modes: &ModeSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "freq_hz", "f_z", "R_n", "branch"]).map_err(csv_error)?;
    for n in 0..modes.len() {
        w.write_record([
            n.to_string(),
            (modes.frequencies[n] / (2.0 * std::f64::consts::PI)).to_string(),
            modes.f_z[n].to_string(),
            modes.pe_ke[n].to_string(),
            modes.branch[n].label().to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    fs::write(path, json)?;
    Ok(())
}
