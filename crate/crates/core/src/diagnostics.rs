//! Thermometry, confinement metrics and closed-form spheroid estimates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::equilibrium::plasma_spheroid;
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::model::{rigid_rotation_velocity, Frame, IonSpecies, SystemState, TrapConfig, Vec3, HBAR, K_BOLTZMANN};

/// Constant in the minimum axial frequency estimate omega_par_min = C omega_p a / Z.
pub const DEFAULT_GAP_CONSTANT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSample {
    /// s
    pub t: f64,
    /// K; negative when the crystal sits below the reference energy.
    pub t_pe: f64,
    pub t_ke_perp: f64,
    pub t_ke_par: f64,
}

/// Doppler cooling limit hbar gamma0 / 2 k_B.
pub fn doppler_limit(ion: &IonSpecies) -> f64 {
    HBAR * ion.linewidth / (2.0 * K_BOLTZMANN)
}

/// (2/3) [U(state) - U(reference)] / (N k_B) with U the rotating-frame
/// potential. Lab states are mapped into the rotating frame at their lab
/// time; `reference` holds rotating-frame positions.
pub fn pe_temperature(state: &SystemState, reference: &[Vec3], field: &ForceField) -> Result<f64> {
    if state.n_ions() != reference.len() {
        return Err(Error::InvalidConfig("state and reference differ in N".into()));
    }
    let positions = match state.frame {
        Frame::Lab => state.to_rotating(&field.trap)?.positions,
        Frame::Rotating => state.positions.clone(),
    };
    let u = field.potential_energy(&positions, 0.0, Frame::Rotating)?;
    let u0 = field.potential_energy(reference, 0.0, Frame::Rotating)?;
    Ok(2.0 / 3.0 * (u - u0) / (state.n_ions() as f64 * K_BOLTZMANN))
}

/// Kinetic temperatures (T_perp, T_par) of the motion relative to rigid
/// rotation at omega_r. Rotating-frame velocities are used as they are.
pub fn ke_temperatures(state: &SystemState, omega_r: f64, ion: &IonSpecies) -> (f64, f64) {
    let (mut perp, mut par) = (0.0, 0.0);
    for (x, v) in state.positions.iter().zip(&state.velocities) {
        let thermal = match state.frame {
            Frame::Lab => v - rigid_rotation_velocity(x, omega_r),
            Frame::Rotating => *v,
        };
        perp += thermal.x * thermal.x + thermal.y * thermal.y;
        par += thermal.z * thermal.z;
    }
    let n = state.n_ions() as f64;
    (
        ion.mass * perp / (2.0 * n * K_BOLTZMANN),
        ion.mass * par / (n * K_BOLTZMANN),
    )
}

pub fn temperature_sample(state: &SystemState, reference: &[Vec3], field: &ForceField) -> Result<TemperatureSample> {
    let (t_ke_perp, t_ke_par) = ke_temperatures(state, field.trap.omega_r, &field.ion);
    Ok(TemperatureSample {
        t: state.time,
        t_pe: pe_temperature(state, reference, field)?,
        t_ke_perp,
        t_ke_par,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfinementReport {
    /// Per-ion rms of x about its window mean, m.
    pub dx_rms: Vec<f64>,
    /// Per-ion rms of z about its window mean, m.
    pub dz_rms: Vec<f64>,
    /// s
    pub window: f64,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

impl ConfinementReport {
    pub fn median_dx(&self) -> f64 {
        median(&self.dx_rms)
    }

    pub fn median_dz(&self) -> f64 {
        median(&self.dz_rms)
    }
}

/// Streaming per-ion mean and variance (Welford) of rotating-frame positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsAccumulator {
    count: usize,
    first_time: f64,
    last_time: f64,
    mean: Vec<Vec3>,
    m2: Vec<Vec3>,
}

impl RmsAccumulator {
    pub fn new(n_ions: usize) -> Self {
        RmsAccumulator {
            count: 0,
            first_time: 0.0,
            last_time: 0.0,
            mean: vec![Vec3::zeros(); n_ions],
            m2: vec![Vec3::zeros(); n_ions],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, state: &SystemState) -> Result<()> {
        state.expect_frame(Frame::Rotating)?;
        if state.n_ions() != self.mean.len() {
            return Err(Error::InvalidConfig("snapshot size differs from window".into()));
        }
        if self.count == 0 {
            self.first_time = state.time;
        }
        self.last_time = state.time;
        self.count += 1;
        let k = self.count as f64;
        for ((x, mean), m2) in state.positions.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = x - *mean;
            *mean += d / k;
            *m2 += d.component_mul(&(x - *mean));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.last_time - self.first_time
    }

    /// Per-ion rms along `axis`; the window must exceed 1/omega_r.
    pub fn rms(&self, axis: Axis, omega_r: f64) -> Result<Vec<f64>> {
        let required = 1.0 / omega_r;
        if !(self.duration() > required) {
            return Err(Error::WindowTooShort {
                duration: self.duration(),
                required,
            });
        }
        let k = self.count as f64;
        Ok(self.m2.iter().map(|m2| (m2[axis.index()] / k).max(0.0).sqrt()).collect())
    }

    pub fn report(&self, omega_r: f64) -> Result<ConfinementReport> {
        Ok(ConfinementReport {
            dx_rms: self.rms(Axis::X, omega_r)?,
            dz_rms: self.rms(Axis::Z, omega_r)?,
            window: self.duration(),
        })
    }
}

/// Per-ion standard deviation of one coordinate over rotating-frame
/// snapshots spanning more than 1/omega_r.
pub fn rms_displacement(window: &[SystemState], axis: Axis, omega_r: f64) -> Result<Vec<f64>> {
    let first = window.first().ok_or(Error::WindowTooShort {
        duration: 0.0,
        required: 1.0 / omega_r,
    })?;
    let mut acc = RmsAccumulator::new(first.n_ions());
    for s in window {
        acc.push(s)?;
    }
    acc.rms(axis, omega_r)
}

/// Crystal size used by the gap estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extents {
    /// Largest cylindrical radius, m.
    pub radius: f64,
    /// Largest |z|, m.
    pub half_length: f64,
    /// Wigner-Seitz radius from the mean density, m.
    pub wigner_seitz: f64,
}

/// Extents of an equilibrium, with the density taken over the bounding
/// spheroid.
pub fn crystal_extents(positions: &[Vec3]) -> Extents {
    let radius = positions.iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
    let half_length = positions.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
    Extents {
        radius,
        half_length,
        wigner_seitz: (radius * radius * half_length / positions.len() as f64).cbrt(),
    }
}

/// Extents of the cold-fluid spheroid holding `n` ions.
pub fn spheroid_extents(n: usize, field: &ForceField) -> Extents {
    let s = plasma_spheroid(n, field);
    Extents {
        radius: s.radius,
        half_length: s.half_length,
        wigner_seitz: (3.0 / (4.0 * PI * s.density)).cbrt(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimates {
    /// Plasma frequency, rad/s.
    pub omega_p: f64,
    /// omega_p^2 / (2 Omega_v); `None` at or beyond the Brillouin limit.
    pub omega_e_max: Option<f64>,
    /// C omega_p a / Z, rad/s.
    pub omega_par_min: f64,
    /// False when Z <= a and the estimates lose meaning.
    pub valid: bool,
}

pub fn gap_estimates(trap: &TrapConfig, ion: &IonSpecies, extents: &Extents, c: f64) -> GapEstimates {
    let wc = trap.cyclotron_frequency(ion);
    let wr = trap.omega_r;
    let wp2 = (2.0 * wr * (wc - wr)).max(0.0);
    let omega_p = wp2.sqrt();
    let vortex = wc - 2.0 * wr;
    let omega_e_max = (vortex > 1e-12 * wc).then(|| wp2 / (2.0 * vortex));
    let valid = extents.half_length > extents.wigner_seitz;
    if !valid {
        log::warn!(
            "gap estimates need Z > a (Z = {:.3e} m, a = {:.3e} m)",
            extents.half_length,
            extents.wigner_seitz
        );
    }
    GapEstimates {
        omega_p,
        omega_e_max,
        omega_par_min: c * omega_p * extents.wigner_seitz / extents.half_length,
        valid,
    }
}

/// Magnetized plasma wave omega^2 = omega_p^2 k_z^2 / (k_perp^2 + k_z^2).
pub fn dispersion_relation(k_z: f64, k_perp: f64, omega_p: f64) -> Result<f64> {
    let k2 = k_z * k_z + k_perp * k_perp;
    if k2 == 0.0 {
        return Err(Error::DegenerateWavevector);
    }
    Ok(omega_p * (k_z * k_z / k2).sqrt())
}
