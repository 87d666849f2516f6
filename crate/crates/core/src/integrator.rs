//! Time steppers.
//!
//! Lab frame: the cyclotronic splitting, a half electric kick, exact gyration
//! about B = B z, then another half kick. Rotating frame: velocity Verlet for
//! m x'' = F - gamma x' + R, with the magnetic term absent.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forces::ForceField;
use crate::model::{Frame, SystemState, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "dt")]
pub enum StepperKind {
    Cyclotronic(f64),
    Verlet(f64),
}

impl StepperKind {
    pub fn frame(&self) -> Frame {
        match self {
            StepperKind::Cyclotronic(_) => Frame::Lab,
            StepperKind::Verlet(_) => Frame::Rotating,
        }
    }

    pub fn dt(&self) -> f64 {
        match *self {
            StepperKind::Cyclotronic(dt) | StepperKind::Verlet(dt) => dt,
        }
    }
}

/// Forces at a known configuration, reused as the first half kick of the
/// next step while positions and time are unchanged.
#[derive(Clone, Debug, Default)]
struct ForceCache {
    positions: Vec<Vec3>,
    time: f64,
    forces: Vec<Vec3>,
    potential: f64,
    valid: bool,
}

impl ForceCache {
    fn matches(&self, positions: &[Vec3], time: f64) -> bool {
        self.valid && self.time.to_bits() == time.to_bits() && self.positions == positions
    }

    fn store(&mut self, positions: &[Vec3], time: f64, potential: f64) {
        self.positions.clear();
        self.positions.extend_from_slice(positions);
        self.time = time;
        self.potential = potential;
        self.valid = true;
    }
}

/// Exact gyration of (x, v) for time `h` under dv/dt = omega_c (v_y, -v_x).
/// With w = v_x + i v_y: w' = w e^{-i omega_c h} and
/// x + i y advances by w (1 - e^{-i omega_c h}) / (i omega_c).
#[inline]
fn gyrate(x: &mut Vec3, v: &mut Vec3, omega_c: f64, h: f64, sin: f64, one_minus_cos: f64) {
    let (a, b) = (v.x, v.y);
    if omega_c == 0.0 {
        *x += *v * h;
        return;
    }
    x.x += (a * sin + b * one_minus_cos) / omega_c;
    x.y += (b * sin - a * one_minus_cos) / omega_c;
    x.z += v.z * h;
    let cos = 1.0 - one_minus_cos;
    v.x = a * cos + b * sin;
    v.y = b * cos - a * sin;
}

/// Lab-frame cyclotronic stepper.
#[derive(Clone, Debug)]
pub struct Cyclotronic {
    dt: f64,
    cache: ForceCache,
}

impl Cyclotronic {
    pub fn new(dt: f64) -> Self {
        Cyclotronic {
            dt,
            cache: ForceCache::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` by dt. Returns the lab potential energy at the end of
    /// the step.
    pub fn step(&mut self, state: &mut SystemState, field: &ForceField) -> Result<f64> {
        state.expect_frame(Frame::Lab)?;
        let n = state.n_ions();
        let dt = self.dt;
        if !self.cache.matches(&state.positions, state.time) {
            self.cache.forces.resize(n, Vec3::zeros());
            let u = field.forces_into(&state.positions, state.time, Frame::Lab, &mut self.cache.forces)?;
            self.cache.store(&state.positions, state.time, u);
        }
        let half = 0.5 * dt / field.ion.mass;
        let omega_c = field.trap.cyclotron_frequency(&field.ion);
        let (sin, cos) = (omega_c * dt).sin_cos();
        let one_minus_cos = 2.0 * (0.5 * omega_c * dt).sin().powi(2);
        debug_assert!((1.0 - cos - one_minus_cos).abs() < 1e-12);

        for ((x, v), f) in state.positions.iter_mut().zip(&mut state.velocities).zip(&self.cache.forces) {
            *v += f * half;
            gyrate(x, v, omega_c, dt, sin, one_minus_cos);
        }
        state.time += dt;
        let u = field.forces_into(&state.positions, state.time, Frame::Lab, &mut self.cache.forces)?;
        for (v, f) in state.velocities.iter_mut().zip(&self.cache.forces) {
            *v += f * half;
        }
        self.cache.store(&state.positions, state.time, u);
        Ok(u)
    }
}

/// One cyclotronic step without force reuse.
pub fn cyclotronic_step(state: &mut SystemState, field: &ForceField, dt: f64) -> Result<f64> {
    Cyclotronic::new(dt).step(state, field)
}

/// Rotating-frame velocity Verlet with linear drag and an optional random
/// force held fixed over the step:
///
/// v_half = v + dt/2m (F - gamma v + R),  x' = x + dt v_half,
/// v' = (v_half + dt/2m (F' + R)) / (1 + gamma dt / 2m).
///
/// For a free particle with Var R = 2 gamma k_B T / dt the stationary
/// velocity variance is exactly k_B T / m.
#[derive(Clone, Debug)]
pub struct Verlet {
    dt: f64,
    mass: f64,
    cache: ForceCache,
}

impl Verlet {
    pub fn new(dt: f64, mass: f64) -> Self {
        Verlet {
            dt,
            mass,
            cache: ForceCache::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `force_fn(positions, out)` writes forces and returns the potential.
    /// Returns the potential energy at the new positions.
    pub fn step<F>(&mut self, state: &mut SystemState, mut force_fn: F, drag: f64, noise: Option<&[Vec3]>) -> Result<f64>
    where
        F: FnMut(&[Vec3], &mut [Vec3]) -> Result<f64>,
    {
        state.expect_frame(Frame::Rotating)?;
        let n = state.n_ions();
        if let Some(r) = noise {
            assert_eq!(r.len(), n, "one random force per ion");
        }
        if !self.cache.matches(&state.positions, state.time) {
            self.cache.forces.resize(n, Vec3::zeros());
            let u = force_fn(&state.positions, &mut self.cache.forces)?;
            self.cache.store(&state.positions, state.time, u);
        }
        let dt = self.dt;
        let half = 0.5 * dt / self.mass;
        for i in 0..n {
            let r = noise.map_or(Vec3::zeros(), |r| r[i]);
            let v = &mut state.velocities[i];
            *v += (self.cache.forces[i] - *v * drag + r) * half;
            state.positions[i] += *v * dt;
        }
        state.time += dt;
        let u = force_fn(&state.positions, &mut self.cache.forces)?;
        let denom = 1.0 + drag * half;
        for i in 0..n {
            let r = noise.map_or(Vec3::zeros(), |r| r[i]);
            let v = &mut state.velocities[i];
            *v = (*v + (self.cache.forces[i] + r) * half) / denom;
        }
        self.cache.store(&state.positions, state.time, u);
        Ok(u)
    }

    /// Step under the rotating-frame forces of `field`.
    pub fn step_field(&mut self, state: &mut SystemState, field: &ForceField, drag: f64, noise: Option<&[Vec3]>) -> Result<f64> {
        self.step(state, |x, out| field.forces_into(x, 0.0, Frame::Rotating, out), drag, noise)
    }
}

/// One Verlet step without force reuse.
pub fn verlet_step<F>(state: &mut SystemState, mass: f64, force_fn: F, dt: f64, drag: f64, noise: Option<&[Vec3]>) -> Result<f64>
where
    F: FnMut(&[Vec3], &mut [Vec3]) -> Result<f64>,
{
    Verlet::new(dt, mass).step(state, force_fn, drag, noise)
}
