//! Minimum-energy crystal configurations in the rotating frame.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::integrator::Verlet;
use crate::model::{Frame, SystemState, Vec3, COULOMB_K, EPSILON_0};

pub const DEFAULT_DAMPING_FRACTION: f64 = 1e-4;
pub const DEFAULT_FORCE_TOL: f64 = 1e-18;
pub const DEFAULT_DAMPING_DT: f64 = 1e-9;
/// Full-gradient 2-norm target for the quasi-Newton refiner, N.
pub const DEFAULT_GRAD_TOL: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Damping,
    QuasiNewton,
    DampingRefine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    /// Rotating-frame positions, m.
    pub positions: Vec<Vec3>,
    /// Largest per-ion net force, N.
    pub residual_force_max: f64,
    /// Rotating-frame potential energy, J.
    pub energy: f64,
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
}

/// Cold-fluid spheroid for the trap: uniform density n0 = eps0 m omega_p^2 / q^2
/// and aspect ratio alpha = Z/R from the depolarization factor
/// N_z(alpha) = omega_z^2 / omega_p^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spheroid {
    pub density: f64,
    pub aspect: f64,
    pub radius: f64,
    pub half_length: f64,
}

/// Axial depolarization factor of a uniformly charged spheroid with aspect
/// ratio alpha = Z/R (1/3 for a sphere, 1 for a flat disk, 0 for a needle).
pub fn depolarization_factor(alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-6 {
        return 1.0 / 3.0;
    }
    if alpha > 1.0 {
        let e = (1.0 - 1.0 / (alpha * alpha)).sqrt();
        (1.0 - e * e) / (e * e * e) * (e.atanh() - e)
    } else {
        let e = (1.0 - alpha * alpha).sqrt();
        (1.0 - (1.0 - e * e).sqrt() * e.asin() / e) / (e * e)
    }
}

pub fn plasma_spheroid(n: usize, field: &ForceField) -> Spheroid {
    let ion = &field.ion;
    let wc = field.trap.cyclotron_frequency(ion);
    let wr = field.trap.omega_r;
    let wp2 = 2.0 * wr * (wc - wr);
    let density = EPSILON_0 * ion.mass * wp2 / (ion.charge * ion.charge);
    let target = (field.trap.omega_z * field.trap.omega_z / wp2).clamp(0.0, 1.0);
    // N_z decreases monotonically in alpha
    let (mut lo, mut hi) = (1e-6_f64, 1e3_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if depolarization_factor(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let aspect = (lo * hi).sqrt();
    let radius = (3.0 * n as f64 / (4.0 * PI * density * aspect)).cbrt();
    Spheroid {
        density,
        aspect,
        radius,
        half_length: aspect * radius,
    }
}

/// Uniform random positions inside the expected crystal spheroid. The axial
/// half-length is floored at one Wigner-Seitz radius so near-planar
/// crystals still start three-dimensional.
pub fn seed_cloud<R: Rng + ?Sized>(n: usize, field: &ForceField, rng: &mut R) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one ion".into()));
    }
    let sph = plasma_spheroid(n, field);
    let ws = (3.0 / (4.0 * PI * sph.density)).cbrt();
    let half_length = sph.half_length.max(ws);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            out.push(Vec3::new(p.x * sph.radius, p.y * sph.radius, p.z * half_length));
        }
    }
    Ok(out)
}

fn max_norm(v: &[Vec3]) -> f64 {
    v.iter().map(|f| f.norm()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingSettings {
    pub damping_fraction: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub force_tol: f64,
}

impl Default for DampingSettings {
    fn default() -> Self {
        DampingSettings {
            damping_fraction: DEFAULT_DAMPING_FRACTION,
            dt: DEFAULT_DAMPING_DT,
            max_steps: 1_000_000,
            force_tol: DEFAULT_FORCE_TOL,
        }
    }
}

/// Rotating-frame Verlet dynamics with the kinetic energy of every ion
/// reduced by `damping_fraction` per step.
pub fn damped_relax(positions: &[Vec3], field: &ForceField, settings: &DampingSettings) -> Result<EquilibriumResult> {
    if !(0.0..1.0).contains(&settings.damping_fraction) {
        return Err(Error::InvalidConfig("damping fraction must be in [0, 1)".into()));
    }
    let mut state = SystemState::at_rest(positions.to_vec(), Frame::Rotating)?;
    let scale = (1.0 - settings.damping_fraction).sqrt();
    let mut stepper = Verlet::new(settings.dt, field.ion.mass);

    let mut forces = vec![Vec3::zeros(); positions.len()];
    let mut energy = field.forces_into(positions, 0.0, Frame::Rotating, &mut forces)?;
    let mut fmax = max_norm(&forces);
    let mut steps = 0;
    while fmax >= settings.force_tol && steps < settings.max_steps {
        energy = stepper.step(
            &mut state,
            |x, out| {
                let u = field.forces_into(x, 0.0, Frame::Rotating, out)?;
                fmax = max_norm(out);
                Ok(u)
            },
            0.0,
            None,
        )?;
        for v in &mut state.velocities {
            *v *= scale;
        }
        steps += 1;
    }
    Ok(EquilibriumResult {
        positions: state.positions,
        residual_force_max: fmax,
        energy,
        method: Method::Damping,
        converged: fmax < settings.force_tol,
        iterations: steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuasiNewtonSettings {
    /// Target 2-norm of the full gradient, N.
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Number of stored correction pairs.
    pub memory: usize,
}

impl Default for QuasiNewtonSettings {
    fn default() -> Self {
        QuasiNewtonSettings {
            grad_tol: DEFAULT_GRAD_TOL,
            max_iterations: 20_000,
            memory: 20,
        }
    }
}

/// Limited-memory BFGS on the rotating-frame potential with a backtracking
/// Armijo line search. Positions are scaled to micrometres and energies to
/// k q^2 / (1 um) internally.
pub fn quasi_newton_refine(positions: &[Vec3], field: &ForceField, settings: &QuasiNewtonSettings) -> Result<EquilibriumResult> {
    let n = positions.len();
    let length = 1e-6;
    let energy_unit = COULOMB_K * field.ion.charge * field.ion.charge / length;
    let force_unit = energy_unit / length;

    let mut forces = vec![Vec3::zeros(); n];
    let mut points = vec![Vec3::zeros(); n];
    let mut evaluate = |x: &[f64], grad: &mut [f64]| -> Result<f64> {
        for (p, c) in points.iter_mut().zip(x.chunks_exact(3)) {
            *p = Vec3::new(c[0], c[1], c[2]) * length;
        }
        let u = field.forces_into(&points, 0.0, Frame::Rotating, &mut forces)?;
        for (g, f) in grad.chunks_exact_mut(3).zip(&forces) {
            g[0] = -f.x / force_unit;
            g[1] = -f.y / force_unit;
            g[2] = -f.z / force_unit;
        }
        Ok(u / energy_unit)
    };

    let x0: Vec<f64> = positions.iter().flat_map(|p| [p.x / length, p.y / length, p.z / length]).collect();
    let out = lbfgs(x0, &mut evaluate, settings.grad_tol / force_unit, settings.max_iterations, settings.memory)?;

    let positions: Vec<Vec3> = if out.iterations == 0 {
        positions.to_vec()
    } else {
        out.x.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2]) * length).collect()
    };
    let residual = out
        .grad
        .chunks_exact(3)
        .map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
        .fold(0.0, f64::max)
        * force_unit;
    Ok(EquilibriumResult {
        positions,
        residual_force_max: residual,
        energy: out.f * energy_unit,
        method: Method::QuasiNewton,
        converged: out.converged,
        iterations: out.iterations,
    })
}

struct LbfgsOutcome {
    x: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs<F>(mut x: Vec<f64>, f: &mut F, gtol: f64, max_iter: usize, memory: usize) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let dim = x.len();
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut dir = vec![0.0; dim];
    let mut alpha = vec![0.0; memory];

    let mut iter = 0;
    while dot(&g, &g).sqrt() >= gtol {
        if iter >= max_iter {
            return Ok(LbfgsOutcome {
                x,
                f: fx,
                grad: g,
                iterations: iter,
                converged: false,
            });
        }
        // two-loop recursion for dir = -H g
        dir.copy_from_slice(&g);
        for k in (0..s_hist.len()).rev() {
            alpha[k] = rho[k] * dot(&s_hist[k], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[k]) {
                *d -= alpha[k] * y;
            }
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            // first step: move at most 0.1 um along the steepest direction
            _ => 0.1 / g.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        };
        for d in dir.iter_mut() {
            *d *= gamma;
        }
        for k in 0..s_hist.len() {
            let beta = rho[k] * dot(&y_hist[k], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[k]) {
                *d += s * (alpha[k] - beta);
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // lost descent: restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            let scale = 0.1 / g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi * scale;
            }
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for ((xn, xi), d) in x_new.iter_mut().zip(&x).zip(&dir) {
                *xn = xi + step * d;
            }
            match f(&x_new, &mut g_new) {
                // Armijo, or near convergence where energy differences drop
                // below rounding, an approximate Wolfe test on the slope
                Ok(v) if v <= fx + 1e-4 * step * slope
                    || (v <= fx + 1e-12 * fx.abs() && dot(&g_new, &dir).abs() <= 0.9 * slope.abs()) =>
                {
                    f_new = v;
                    accepted = true;
                    break;
                }
                // overlapping ions or insufficient decrease: shrink
                Ok(_) | Err(Error::SingularConfiguration(..)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        iter += 1;
        if !accepted {
            return Ok(LbfgsOutcome {
                x,
                f: fx,
                grad: g,
                iterations: iter,
                converged: false,
            });
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
    }
    Ok(LbfgsOutcome {
        x,
        f: fx,
        grad: g,
        iterations: iter,
        converged: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EquilibrateSettings {
    pub damping: DampingSettings,
    pub refine: QuasiNewtonSettings,
    /// Skip the refiner above this many ions.
    pub refine_max_ions: Option<usize>,
}

/// Seeded cloud, then damping, then quasi-Newton refinement for small N.
pub fn equilibrate<R: Rng + ?Sized>(n: usize, field: &ForceField, settings: &EquilibrateSettings, rng: &mut R) -> Result<EquilibriumResult> {
    field.trap.validate(&field.ion)?;
    let seed = seed_cloud(n, field, rng)?;
    let damped = damped_relax(&seed, field, &settings.damping)?;
    if n > settings.refine_max_ions.unwrap_or(2000) {
        return Ok(damped);
    }
    let mut refined = quasi_newton_refine(&damped.positions, field, &settings.refine)?;
    refined.method = Method::DampingRefine;
    refined.iterations += damped.iterations;
    Ok(refined)
}
