//! Trap, rotating-wall and Coulomb forces with matching potential energies.
//!
//! Lab frame: q phi_trap = (m omega_z^2 / 2)(z^2 - (x^2 + y^2)/2) and
//! q phi_wall = (q k_z delta / 2) r^2 cos 2(phi + omega_r t).
//!
//! Rotating frame (co-rotating with the wall, magnetic term folded into the
//! effective potential): sum_i [kx x^2 + ky y^2 + m omega_z^2 z^2] / 2 plus
//! Coulomb, with (kx, ky) from [`TrapConfig::radial_stiffness`].

pub mod direct;
pub mod tree;

pub use direct::coulomb_direct;
pub use tree::coulomb_tree;

use crate::error::Result;
use crate::model::{CoulombMethod, Frame, IonSpecies, SystemState, TrapConfig, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceField {
    pub trap: TrapConfig,
    pub ion: IonSpecies,
    pub coulomb: CoulombMethod,
}

impl ForceField {
    pub fn new(trap: TrapConfig, ion: IonSpecies, coulomb: CoulombMethod) -> Self {
        ForceField { trap, ion, coulomb }
    }

    pub fn direct(trap: TrapConfig, ion: IonSpecies) -> Self {
        Self::new(trap, ion, CoulombMethod::Direct)
    }

    /// Wall phase terms (cos 2 omega_r t, sin 2 omega_r t).
    #[inline]
    fn wall_phase(&self, t: f64) -> (f64, f64) {
        let (s, c) = (2.0 * self.trap.omega_r * t).sin_cos();
        (c, s)
    }

    #[inline]
    fn wall_coefficient(&self) -> f64 {
        self.ion.mass * self.trap.omega_z * self.trap.omega_z * self.trap.wall_strength
    }

    /// Single-ion external force. `t` is the lab time and only matters in the
    /// lab frame.
    pub fn trap_wall_force(&self, x: &Vec3, t: f64, frame: Frame) -> Vec3 {
        let m = self.ion.mass;
        let wz2 = self.trap.omega_z * self.trap.omega_z;
        match frame {
            Frame::Lab => {
                let (c, s) = self.wall_phase(t);
                let w = self.wall_coefficient();
                Vec3::new(
                    0.5 * m * wz2 * x.x - w * (x.x * c - x.y * s),
                    0.5 * m * wz2 * x.y + w * (x.y * c + x.x * s),
                    -m * wz2 * x.z,
                )
            }
            Frame::Rotating => {
                let (kx, ky) = self.trap.radial_stiffness(&self.ion);
                Vec3::new(-kx * x.x, -ky * x.y, -m * wz2 * x.z)
            }
        }
    }

    /// Single-ion external potential energy matching [`Self::trap_wall_force`].
    pub fn trap_wall_potential(&self, x: &Vec3, t: f64, frame: Frame) -> f64 {
        let m = self.ion.mass;
        let wz2 = self.trap.omega_z * self.trap.omega_z;
        match frame {
            Frame::Lab => {
                let (c, s) = self.wall_phase(t);
                let trap = 0.5 * m * wz2 * (x.z * x.z - 0.5 * (x.x * x.x + x.y * x.y));
                let wall = 0.5 * self.wall_coefficient() * ((x.x * x.x - x.y * x.y) * c - 2.0 * x.x * x.y * s);
                trap + wall
            }
            Frame::Rotating => {
                let (kx, ky) = self.trap.radial_stiffness(&self.ion);
                0.5 * (kx * x.x * x.x + ky * x.y * x.y + m * wz2 * x.z * x.z)
            }
        }
    }

    /// Coulomb forces added into `out`; returns the Coulomb energy.
    pub fn accumulate_coulomb(&self, positions: &[Vec3], out: &mut [Vec3]) -> Result<f64> {
        match self.coulomb {
            CoulombMethod::Direct => direct::accumulate_direct(positions, self.ion.charge, out),
            CoulombMethod::Tree { theta, order } => {
                let (f, u) = coulomb_tree(positions, self.ion.charge, theta, order)?;
                for (o, fi) in out.iter_mut().zip(f) {
                    *o += fi;
                }
                Ok(u)
            }
        }
    }

    /// Total forces written into `out` (overwritten); returns the total
    /// potential energy in the same frame.
    pub fn forces_into(&self, positions: &[Vec3], t: f64, frame: Frame, out: &mut [Vec3]) -> Result<f64> {
        let mut external = 0.0;
        for (o, x) in out.iter_mut().zip(positions) {
            *o = self.trap_wall_force(x, t, frame);
            external += self.trap_wall_potential(x, t, frame);
        }
        let coulomb = self.accumulate_coulomb(positions, out)?;
        Ok(external + coulomb)
    }

    pub fn total_forces(&self, state: &SystemState) -> Result<Vec<Vec3>> {
        let mut out = vec![Vec3::zeros(); state.n_ions()];
        self.forces_into(&state.positions, state.time, state.frame, &mut out)?;
        Ok(out)
    }

    /// Potential energy at the state's own time (lab wall phase) or the
    /// time-independent rotating-frame form.
    pub fn total_potential_energy(&self, state: &SystemState) -> Result<f64> {
        self.potential_energy(&state.positions, state.time, state.frame)
    }

    pub fn potential_energy(&self, positions: &[Vec3], t: f64, frame: Frame) -> Result<f64> {
        let external: f64 = positions.iter().map(|x| self.trap_wall_potential(x, t, frame)).sum();
        let coulomb = match self.coulomb {
            CoulombMethod::Direct => {
                let mut scratch = vec![Vec3::zeros(); positions.len()];
                direct::accumulate_direct(positions, self.ion.charge, &mut scratch)?
            }
            CoulombMethod::Tree { theta, order } => coulomb_tree(positions, self.ion.charge, theta, order)?.1,
        };
        Ok(external + coulomb)
    }

    /// Energy conserved by lab-frame dynamics with the wall switched on:
    /// E_lab + omega_r L_z, with L_z the canonical angular momentum
    /// sum m (x v_y - y v_x) + q B r^2 / 2. Equals the rotating-frame kinetic
    /// plus effective potential energy of the same state.
    pub fn conserved_energy(&self, state: &SystemState) -> Result<f64> {
        state.expect_frame(Frame::Lab)?;
        let m = self.ion.mass;
        let qb = self.ion.charge * self.trap.b_field;
        let lz: f64 = state
            .positions
            .iter()
            .zip(&state.velocities)
            .map(|(x, v)| m * (x.x * v.y - x.y * v.x) + 0.5 * qb * (x.x * x.x + x.y * x.y))
            .sum();
        Ok(state.kinetic_energy(&self.ion) + self.total_potential_energy(state)? + self.trap.omega_r * lz)
    }
}
