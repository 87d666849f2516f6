//! Stochastic Doppler cooling: each ion scatters a Poisson number of photons
//! from every beam per step, absorbing along the beam and emitting
//! isotropically. All recoils of one step are summed into a single kick.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Poisson, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{BeamConfig, Frame, IonSpecies, SystemState, Vec3};
use crate::rng::IonStreams;

pub const AXIAL_SATURATION: f64 = 5e-3;
pub const PERP_SATURATION: f64 = 0.5;
pub const PERP_WAIST_Y: f64 = 20.0 * SQRT_2 * 1e-6;
pub const PERP_WAIST_Z: f64 = 100.0 * SQRT_2 * 1e-6;
/// Chosen for crystals of ~100 ions: far enough red that the beam's own
/// emission heating leaves a centred ion near the Doppler limit.
pub const PERP_DETUNING_HZ: f64 = -40e6;
pub const PERP_OFFSET: f64 = 15e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSet {
    pub beams: Vec<BeamConfig>,
}

impl BeamSet {
    /// Two counter-propagating uniform axial beams at -gamma0/2 plus the
    /// Gaussian perpendicular beam along +x, offset along +y.
    pub fn standard(ion: &IonSpecies) -> Self {
        let mut set = Self::axial_only(ion);
        set.beams.push(
            BeamConfig::new(
                Vec3::x(),
                2.0 * PI * PERP_DETUNING_HZ,
                PERP_SATURATION,
                PERP_WAIST_Y,
                PERP_WAIST_Z,
                PERP_OFFSET,
            )
            .expect("valid default beam"),
        );
        set
    }

    pub fn axial_only(ion: &IonSpecies) -> Self {
        let axial = |dir: Vec3| BeamConfig::uniform(dir, -0.5 * ion.linewidth, AXIAL_SATURATION).expect("valid default beam");
        BeamSet {
            beams: vec![axial(Vec3::z()), axial(-Vec3::z())],
        }
    }

    pub fn empty() -> Self {
        BeamSet { beams: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.beams.iter().try_for_each(BeamConfig::validate)
    }
}

/// Local saturation parameter of `beam` at lab position `x`.
pub fn saturation(x: &Vec3, beam: &BeamConfig) -> f64 {
    let mut exponent = 0.0;
    if beam.waist_y.is_finite() {
        let dy = x.y - beam.offset;
        exponent += 2.0 * dy * dy / (beam.waist_y * beam.waist_y);
    }
    if beam.waist_z.is_finite() {
        exponent += 2.0 * x.z * x.z / (beam.waist_z * beam.waist_z);
    }
    beam.peak_saturation * (-exponent).exp()
}

/// Photon scattering rate (1/s) of an ion at lab position `x` with lab
/// velocity `v`.
pub fn scattering_rate(x: &Vec3, v: &Vec3, beam: &BeamConfig, ion: &IonSpecies) -> f64 {
    let s = saturation(x, beam);
    if s == 0.0 {
        return 0.0;
    }
    let half = 0.5 * ion.linewidth;
    let shift = beam.detuning - ion.wavenumber() * beam.k_direction.dot(v);
    s * ion.linewidth * half * half / (half * half * (1.0 + 2.0 * s) + shift * shift)
}

/// Poisson-distributed photon count with mean `rate * dt`.
pub fn sample_photon_count<R: Rng + ?Sized>(rate: f64, dt: f64, rng: &mut R) -> u64 {
    let mean = rate * dt;
    if !(mean > 0.0) {
        return 0;
    }
    let poisson = Poisson::new(mean).expect("finite positive mean");
    poisson.sample(rng) as u64
}

/// Summed recoil of one ion over one step, with the number of photons
/// scattered.
pub fn ion_kick<R: Rng + ?Sized>(x: &Vec3, v: &Vec3, beams: &BeamSet, ion: &IonSpecies, dt: f64, rng: &mut R) -> (Vec3, u64) {
    let recoil = ion.recoil_velocity();
    let mut dv = Vec3::zeros();
    let mut total = 0;
    for beam in &beams.beams {
        let n = sample_photon_count(scattering_rate(x, v, beam, ion), dt, rng);
        if n == 0 {
            continue;
        }
        dv += beam.k_direction * (n as f64 * recoil);
        for _ in 0..n {
            let u: [f64; 3] = UnitSphere.sample(rng);
            dv += Vec3::from(u) * recoil;
        }
        total += n;
    }
    (dv, total)
}

/// Applies one step of photon recoils to a lab-frame state. Ion i draws only
/// from stream i, so the result is independent of the thread count.
pub fn cooling_kick(state: &mut SystemState, beams: &BeamSet, ion: &IonSpecies, dt: f64, streams: &mut IonStreams) -> Result<u64> {
    state.expect_frame(Frame::Lab)?;
    assert_eq!(streams.len(), state.n_ions(), "one random stream per ion");
    if beams.beams.is_empty() {
        return Ok(0);
    }
    let positions = &state.positions;
    let photons = state
        .velocities
        .par_iter_mut()
        .zip(streams.par_iter_mut())
        .enumerate()
        .map(|(i, (v, rng))| {
            let (dv, n) = ion_kick(&positions[i], v, beams, ion, dt, rng);
            *v += dv;
            n
        })
        .sum();
    Ok(photons)
}
