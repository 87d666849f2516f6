//! Physical constants, configuration types and the evolving phase-space state.
//!
//! Everything in here is SI. Frequencies are angular (rad/s); conversion from
//! the Hz values used in config files happens in [`crate::harness::config`].

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const K_BOLTZMANN: f64 = 1.380_649e-23;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// 1/(4 pi eps0)
pub const COULOMB_K: f64 = 1.0 / (4.0 * PI * EPSILON_0);

/// Ion species. Only single-species crystals are supported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    /// Wavelength of the cooling transition, m.
    pub transition_wavelength: f64,
    /// Natural linewidth gamma_0, rad/s.
    pub linewidth: f64,
}

impl IonSpecies {
    pub fn new(mass: f64, charge: f64, transition_wavelength: f64, linewidth: f64) -> Result<Self> {
        let ion = IonSpecies {
            mass,
            charge,
            transition_wavelength,
            linewidth,
        };
        ion.validate()?;
        Ok(ion)
    }

    /// 9Be+ on the 2s 2S1/2 -> 2p 2P3/2 cycling transition.
    pub fn beryllium9() -> Self {
        IonSpecies {
            mass: 1.4965e-26,
            charge: ELEMENTARY_CHARGE,
            transition_wavelength: 313.13e-9,
            linewidth: 2.0 * PI * 18.0e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("ion {name} must be positive, got {v}")))
            }
        };
        positive(self.mass, "mass")?;
        positive(self.charge, "charge")?;
        positive(self.transition_wavelength, "transition_wavelength")?;
        positive(self.linewidth, "linewidth")
    }

    /// |k| = 2 pi / lambda
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.transition_wavelength
    }

    /// Transition angular frequency omega_0 = 2 pi c / lambda.
    pub fn transition_frequency(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.transition_wavelength
    }

    /// Velocity change from one photon recoil, hbar |k| / m.
    pub fn recoil_velocity(&self) -> f64 {
        HBAR * self.wavenumber() / self.mass
    }
}

impl Default for IonSpecies {
    fn default() -> Self {
        IonSpecies::beryllium9()
    }
}

/// Static trap environment: uniform axial B field, harmonic quadrupole
/// potential and the rotating wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// Tesla
    pub b_field: f64,
    /// Axial trap frequency, rad/s.
    pub omega_z: f64,
    /// Rotating-wall strength relative to the trap potential.
    pub wall_strength: f64,
    /// Rotating-wall frequency, rad/s.
    pub omega_r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    /// Cyclotron frequency qB/m, rad/s.
    pub omega_c: f64,
    /// Trap curvature m omega_z^2 / q, V/m^2.
    pub k_z: f64,
    /// Vortex frequency omega_c - 2 omega_r, rad/s.
    pub vortex: f64,
    /// Radial-to-axial confinement ratio.
    pub beta: f64,
}

pub fn derived_quantities(trap: &TrapConfig, ion: &IonSpecies) -> DerivedQuantities {
    let omega_c = ion.charge * trap.b_field / ion.mass;
    DerivedQuantities {
        omega_c,
        k_z: ion.mass * trap.omega_z * trap.omega_z / ion.charge,
        vortex: omega_c - 2.0 * trap.omega_r,
        beta: trap.omega_r * (omega_c - trap.omega_r) / (trap.omega_z * trap.omega_z) - 0.5,
    }
}

impl TrapConfig {
    /// Trap with its frequencies given in Hz (not rad/s).
    pub fn from_hz(b_field: f64, omega_z_hz: f64, omega_r_hz: f64, wall_strength: f64) -> Self {
        TrapConfig {
            b_field,
            omega_z: 2.0 * PI * omega_z_hz,
            wall_strength,
            omega_r: 2.0 * PI * omega_r_hz,
        }
    }

    pub fn cyclotron_frequency(&self, ion: &IonSpecies) -> f64 {
        ion.charge * self.b_field / ion.mass
    }

    /// Rotating-frame radial spring constants (N/m) along x_r and y_r:
    /// m(omega_c omega_r - omega_r^2 - omega_z^2/2) +/- q k_z delta.
    pub fn radial_stiffness(&self, ion: &IonSpecies) -> (f64, f64) {
        let d = derived_quantities(self, ion);
        let base = ion.mass
            * (d.omega_c * self.omega_r - self.omega_r * self.omega_r - 0.5 * self.omega_z * self.omega_z);
        let wall = ion.charge * d.k_z * self.wall_strength;
        (base + wall, base - wall)
    }

    pub fn validate(&self, ion: &IonSpecies) -> Result<()> {
        ion.validate()?;
        if !(self.b_field.is_finite() && self.b_field > 0.0) {
            return Err(Error::InvalidConfig(format!("b_field must be positive, got {}", self.b_field)));
        }
        if !(self.omega_z.is_finite() && self.omega_z > 0.0) {
            return Err(Error::InvalidConfig(format!("omega_z must be positive, got {}", self.omega_z)));
        }
        if !(self.wall_strength.is_finite() && self.wall_strength >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "wall strength must be non-negative, got {}",
                self.wall_strength
            )));
        }
        let omega_c = self.cyclotron_frequency(ion);
        if !(self.omega_r > 0.0 && self.omega_r < 0.5 * omega_c) {
            return Err(Error::InvalidConfig(format!(
                "omega_r = {:.4e} rad/s outside (0, omega_c/2 = {:.4e})",
                self.omega_r,
                0.5 * omega_c
            )));
        }
        let (kx, ky) = self.radial_stiffness(ion);
        if kx <= 0.0 || ky <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "no radial confinement in the rotating frame (stiffness {kx:.3e}, {ky:.3e} N/m)"
            )));
        }
        Ok(())
    }
}

/// JSON has no infinity: uniform beams store their waist as null.
mod waist {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &f64, s: S) -> Result<S::Ok, S::Error> {
        if w.is_finite() {
            s.serialize_some(w)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A single cooling laser beam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    /// Unit propagation direction.
    pub k_direction: Vec3,
    /// Laser detuning from resonance, rad/s.
    pub detuning: f64,
    /// Saturation parameter at peak intensity.
    pub peak_saturation: f64,
    /// Gaussian waist along y, m. Infinite for a uniform beam.
    #[serde(with = "waist")]
    pub waist_y: f64,
    /// Gaussian waist along z, m. Infinite for a uniform beam.
    #[serde(with = "waist")]
    pub waist_z: f64,
    /// Offset of the beam centre along y, m.
    pub offset: f64,
}

impl BeamConfig {
    pub fn uniform(k_direction: Vec3, detuning: f64, peak_saturation: f64) -> Result<Self> {
        Self::new(k_direction, detuning, peak_saturation, f64::INFINITY, f64::INFINITY, 0.0)
    }

    pub fn new(
        k_direction: Vec3,
        detuning: f64,
        peak_saturation: f64,
        waist_y: f64,
        waist_z: f64,
        offset: f64,
    ) -> Result<Self> {
        let norm = k_direction.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidConfig("beam direction must be non-zero".into()));
        }
        let beam = BeamConfig {
            k_direction: k_direction / norm,
            detuning,
            peak_saturation,
            waist_y,
            waist_z,
            offset,
        };
        beam.validate()?;
        Ok(beam)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.k_direction.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("beam direction must be a unit vector".into()));
        }
        if !(self.peak_saturation >= 0.0 && self.peak_saturation.is_finite()) {
            return Err(Error::InvalidConfig("beam saturation must be >= 0".into()));
        }
        if !(self.waist_y > 0.0 && self.waist_z > 0.0) {
            return Err(Error::InvalidConfig("beam waists must be positive or infinite".into()));
        }
        if !self.detuning.is_finite() || !self.offset.is_finite() {
            return Err(Error::InvalidConfig("beam detuning and offset must be finite".into()));
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.waist_y.is_infinite() && self.waist_z.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lab,
    Rotating,
}

/// Positions and velocities of N ions plus the simulation clock.
///
/// For lab-frame states `time` is the lab time that fixes the rotating-wall
/// phase. Rotating-frame states carry their own integration clock; the frame
/// transformation takes the lab time explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub time: f64,
    pub frame: Frame,
}

/// Rotate the xy components by `angle` (counter-clockwise about +z).
#[inline]
pub fn rotate_xy(v: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Velocity of rigid rotation with the wall. With B along +z the crystal
/// co-rotates with the wall in the clockwise sense, i.e. v = -omega_r z x r.
#[inline]
pub fn rigid_rotation_velocity(x: &Vec3, omega_r: f64) -> Vec3 {
    Vec3::new(omega_r * x.y, -omega_r * x.x, 0.0)
}

impl SystemState {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>, time: f64, frame: Frame) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidConfig("state needs at least one ion".into()));
        }
        if positions.len() != velocities.len() {
            return Err(Error::InvalidConfig(format!(
                "{} positions but {} velocities",
                positions.len(),
                velocities.len()
            )));
        }
        Ok(SystemState {
            positions,
            velocities,
            time,
            frame,
        })
    }

    /// Ions at rest at the given positions.
    pub fn at_rest(positions: Vec<Vec3>, frame: Frame) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![Vec3::zeros(); n], 0.0, frame)
    }

    pub fn n_ions(&self) -> usize {
        self.positions.len()
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame == frame {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                expected: frame,
                found: self.frame,
            })
        }
    }

    /// Lab-frame state at lab time `self.time` mapped into the frame
    /// co-rotating with the wall: x_r = R(omega_r t) x.
    pub fn to_rotating(&self, trap: &TrapConfig) -> Result<SystemState> {
        self.expect_frame(Frame::Lab)?;
        let angle = trap.omega_r * self.time;
        let positions: Vec<Vec3> = self.positions.iter().map(|x| rotate_xy(x, angle)).collect();
        let velocities = self
            .positions
            .iter()
            .zip(&self.velocities)
            .map(|(x, v)| rotate_xy(&(v - rigid_rotation_velocity(x, trap.omega_r)), angle))
            .collect();
        Ok(SystemState {
            positions,
            velocities,
            time: self.time,
            frame: Frame::Rotating,
        })
    }

    /// Rotating-frame state placed into the lab frame at lab time `t_lab`.
    pub fn to_lab(&self, trap: &TrapConfig, t_lab: f64) -> Result<SystemState> {
        self.expect_frame(Frame::Rotating)?;
        let angle = -trap.omega_r * t_lab;
        let positions: Vec<Vec3> = self.positions.iter().map(|x| rotate_xy(x, angle)).collect();
        let velocities = positions
            .iter()
            .zip(&self.velocities)
            .map(|(x, v)| rotate_xy(v, angle) + rigid_rotation_velocity(x, trap.omega_r))
            .collect();
        Ok(SystemState {
            positions,
            velocities,
            time: t_lab,
            frame: Frame::Lab,
        })
    }

    pub fn kinetic_energy(&self, ion: &IonSpecies) -> f64 {
        0.5 * ion.mass * self.velocities.iter().map(|v| v.norm_squared()).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum CoulombMethod {
    #[default]
    Direct,
    Tree { theta: f64, order: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// s
    pub dt: f64,
    pub n_steps: u64,
    pub rng_seed: u64,
    pub coulomb_method: CoulombMethod,
    /// Steps between recorded samples.
    pub snapshot_interval: u64,
}

/// omega_c dt above which a warning is issued.
pub const STABILITY_WARN_THRESHOLD: f64 = 0.1;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.snapshot_interval == 0 {
            return Err(Error::InvalidConfig("snapshot_interval must be >= 1".into()));
        }
        if let CoulombMethod::Tree { theta, .. } = self.coulomb_method {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::InvalidConfig(format!("tree opening angle {theta} not in (0, 1]")));
            }
        }
        Ok(())
    }

    /// Warning text when omega_c dt exceeds [`STABILITY_WARN_THRESHOLD`].
    pub fn stability_warning(&self, trap: &TrapConfig, ion: &IonSpecies) -> Option<String> {
        let wc_dt = trap.cyclotron_frequency(ion) * self.dt;
        (wc_dt > STABILITY_WARN_THRESHOLD).then(|| {
            format!("omega_c dt = {wc_dt:.3} exceeds {STABILITY_WARN_THRESHOLD}; expect integration artifacts")
        })
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-9,
            n_steps: 0,
            rng_seed: 0,
            coulomb_method: CoulombMethod::Direct,
            snapshot_interval: 1000,
        }
    }
}
