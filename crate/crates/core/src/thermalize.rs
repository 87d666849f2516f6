//! Thermal initialization: Maxwell-Boltzmann velocities, Metropolis-Hastings
//! position sampling in the rotating-frame potential, and a Langevin
//! thermostat for large crystals.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::integrator::Verlet;
use crate::model::{Frame, IonSpecies, SystemState, Vec3, COULOMB_K, K_BOLTZMANN};
use crate::rng::{stage, stage_rng, IonStreams};

pub const DEFAULT_MH_STEP: f64 = 0.5e-6;
pub const DEFAULT_MH_SCANS: usize = 1000;
/// Velocity relaxation time m / gamma of the default thermostat.
pub const DEFAULT_LANGEVIN_RELAXATION: f64 = 10e-6;
pub const DEFAULT_LANGEVIN_STEPS: usize = 100_000;
pub const DEFAULT_LANGEVIN_DT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMethod {
    MetropolisHastings,
    Langevin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalizeConfig {
    /// K
    pub target_temperature: f64,
    /// Largest Metropolis displacement, m.
    pub mh_step: f64,
    pub mh_scans: usize,
    /// kg/s
    pub langevin_gamma: f64,
    pub langevin_steps: usize,
    /// s
    pub langevin_dt: f64,
    pub method: PositionMethod,
}

impl ThermalizeConfig {
    pub fn new(target_temperature: f64, ion: &IonSpecies) -> Self {
        ThermalizeConfig {
            target_temperature,
            mh_step: DEFAULT_MH_STEP,
            mh_scans: DEFAULT_MH_SCANS,
            langevin_gamma: ion.mass / DEFAULT_LANGEVIN_RELAXATION,
            langevin_steps: DEFAULT_LANGEVIN_STEPS,
            langevin_dt: DEFAULT_LANGEVIN_DT,
            method: PositionMethod::MetropolisHastings,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_temperature >= 0.0) || !self.target_temperature.is_finite() {
            return Err(Error::InvalidConfig("target temperature must be >= 0".into()));
        }
        if !(self.mh_step > 0.0) || !self.mh_step.is_finite() {
            return Err(Error::InvalidConfig("Metropolis step must be > 0".into()));
        }
        if !(self.langevin_gamma >= 0.0) || !(self.langevin_dt > 0.0) {
            return Err(Error::InvalidConfig("Langevin gamma must be >= 0 and dt > 0".into()));
        }
        Ok(())
    }
}

/// Independent Gaussian components with variance k_B T / m.
pub fn sample_mb_velocities<R: Rng + ?Sized>(n: usize, temperature: f64, ion: &IonSpecies, rng: &mut R) -> Vec<Vec3> {
    if temperature <= 0.0 {
        return vec![Vec3::zeros(); n];
    }
    let sigma = (K_BOLTZMANN * temperature / ion.mass).sqrt();
    (0..n)
        .map(|_| {
            Vec3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ) * sigma
        })
        .collect()
}

/// Metropolis rule: downhill always, uphill with probability
/// exp(-dE / k_B T). At T = 0 only strictly downhill moves pass.
pub fn metropolis_accept<R: Rng + ?Sized>(delta_e: f64, temperature: f64, rng: &mut R) -> bool {
    if delta_e < 0.0 {
        return true;
    }
    if temperature <= 0.0 || !delta_e.is_finite() {
        return false;
    }
    rng.random::<f64>() < (-delta_e / (K_BOLTZMANN * temperature)).exp()
}

/// Rotating-frame energy change from moving ion `i` of `positions` to `to`,
/// O(N). Infinite if `to` lands on another ion.
pub fn single_ion_delta_energy(positions: &[Vec3], i: usize, to: &Vec3, field: &ForceField) -> f64 {
    let from = &positions[i];
    let kq2 = COULOMB_K * field.ion.charge * field.ion.charge;
    let mut coulomb = 0.0;
    for (j, p) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let r_new = (to - p).norm();
        if r_new == 0.0 {
            return f64::INFINITY;
        }
        coulomb += 1.0 / r_new - 1.0 / (from - p).norm();
    }
    field.trap_wall_potential(to, 0.0, Frame::Rotating) - field.trap_wall_potential(from, 0.0, Frame::Rotating)
        + kq2 * coulomb
}

#[derive(Clone, Debug)]
pub struct MetropolisOutcome {
    pub positions: Vec<Vec3>,
    pub proposed: usize,
    pub accepted: usize,
}

impl MetropolisOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// `scans` sweeps over the ions in index order; each proposal moves one ion
/// in a uniform direction by a distance uniform in (0, step).
pub fn mh_position_init<R: Rng + ?Sized>(
    equilibrium: &[Vec3],
    temperature: f64,
    step: f64,
    scans: usize,
    field: &ForceField,
    rng: &mut R,
) -> Result<MetropolisOutcome> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("Metropolis step must be > 0".into()));
    }
    let mut positions = equilibrium.to_vec();
    let mut accepted = 0;
    for _ in 0..scans {
        for i in 0..positions.len() {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let dist = step * rng.random::<f64>();
            let to = positions[i] + Vec3::from(dir) * dist;
            let de = single_ion_delta_energy(&positions, i, &to, field);
            if metropolis_accept(de, temperature, rng) {
                positions[i] = to;
                accepted += 1;
            }
        }
    }
    Ok(MetropolisOutcome {
        positions,
        proposed: scans * equilibrium.len(),
        accepted,
    })
}

/// Langevin dynamics m x'' = F - gamma x' + R with R Gaussian of variance
/// 2 gamma k_B T / dt per component, drawn per ion from `streams` and held
/// over each step. `force_fn` follows the Verlet convention.
#[allow(clippy::too_many_arguments)]
pub fn langevin_run<F>(
    state: &mut SystemState,
    temperature: f64,
    gamma: f64,
    steps: usize,
    dt: f64,
    mass: f64,
    mut force_fn: F,
    streams: &mut IonStreams,
) -> Result<()>
where
    F: FnMut(&[Vec3], &mut [Vec3]) -> Result<f64>,
{
    state.expect_frame(Frame::Rotating)?;
    if streams.len() != state.n_ions() {
        return Err(Error::InvalidConfig("one random stream per ion required".into()));
    }
    let sigma = (2.0 * gamma * K_BOLTZMANN * temperature.max(0.0) / dt).sqrt();
    let mut stepper = Verlet::new(dt, mass);
    let mut noise = vec![Vec3::zeros(); state.n_ions()];
    for _ in 0..steps {
        if sigma > 0.0 {
            for (r, rng) in noise.iter_mut().zip(streams.iter_mut()) {
                *r = Vec3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ) * sigma;
            }
        }
        stepper.step(state, &mut force_fn, gamma, Some(&noise))?;
    }
    Ok(())
}

/// Langevin thermostat under the rotating-frame forces of `field`.
pub fn langevin_thermalize(
    state: &SystemState,
    temperature: f64,
    cfg: &ThermalizeConfig,
    field: &ForceField,
    streams: &mut IonStreams,
) -> Result<SystemState> {
    let mut out = state.clone();
    langevin_run(
        &mut out,
        temperature,
        cfg.langevin_gamma,
        cfg.langevin_steps,
        cfg.langevin_dt,
        field.ion.mass,
        |x, f| field.forces_into(x, 0.0, Frame::Rotating, f),
        streams,
    )?;
    Ok(out)
}

/// Rotating-frame state at `cfg.target_temperature` started from an
/// equilibrium. Positions come from Metropolis-Hastings or the Langevin
/// thermostat; Metropolis runs pair with Maxwell-Boltzmann velocities.
pub fn thermalize(equilibrium: &[Vec3], cfg: &ThermalizeConfig, field: &ForceField, seed: u64) -> Result<SystemState> {
    cfg.validate()?;
    let t = cfg.target_temperature;
    let velocities = sample_mb_velocities(equilibrium.len(), t, &field.ion, &mut stage_rng(seed, stage::MAXWELL_BOLTZMANN));
    match cfg.method {
        PositionMethod::MetropolisHastings => {
            let mh = mh_position_init(equilibrium, t, cfg.mh_step, cfg.mh_scans, field, &mut stage_rng(seed, stage::METROPOLIS))?;
            log::info!("Metropolis acceptance {:.3}", mh.acceptance_rate());
            SystemState::new(mh.positions, velocities, 0.0, Frame::Rotating)
        }
        PositionMethod::Langevin => {
            let start = SystemState::new(equilibrium.to_vec(), velocities, 0.0, Frame::Rotating)?;
            let mut streams = IonStreams::new(seed, stage::LANGEVIN, equilibrium.len());
            let mut out = langevin_thermalize(&start, t, cfg, field, &mut streams)?;
            out.time = 0.0;
            Ok(out)
        }
    }
}
