//! Normal modes of a crystal about a rotating-frame equilibrium.
//!
//! Linearized motion: m x'' = -K x - 2 W x', with K the Hessian of the
//! rotating-frame potential and W = (m Omega_v / 2)[z x] per ion. In
//! energy-weighted coordinates z = (K^{1/2} x, sqrt(m) v) the generator
//!
//! ```text
//! A = [[0, B], [-B, -2W/m]],  B = K^{1/2} / sqrt(m)
//! ```
//!
//! is real antisymmetric, so H = iA is Hermitian. An eigenvector y of H with
//! eigenvalue omega > 0 is a mode evolving as e^{-i omega t}; its velocity
//! part gives u^v = y_v / sqrt(m) and u^r = i u^v / omega.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::model::{Frame, SystemState, Vec3, COULOMB_K};

type C64 = Complex<f64>;

/// Negative stiffness eigenvalues below this fraction of the largest one
/// mark an unstable equilibrium.
pub const STABILITY_TOL: f64 = 1e-6;
/// Modes with omega below this fraction of the largest frequency are zero
/// modes.
pub const ZERO_MODE_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct Linearization {
    /// 3N x 3N, N/m, ion-major (x1, y1, z1, x2, ...).
    pub stiffness: DMatrix<f64>,
    /// 3N x 3N antisymmetric, kg/s.
    pub lorentz: DMatrix<f64>,
    pub equilibrium: Vec<Vec3>,
    pub mass: f64,
}

fn coulomb_block(r: &Vec3, kq2: f64) -> Matrix3<f64> {
    let r2 = r.norm_squared();
    let inv_r5 = 1.0 / (r2 * r2 * r2.sqrt());
    (r * r.transpose() * 3.0 - Matrix3::identity() * r2) * (kq2 * inv_r5)
}

/// Analytic Hessian of the rotating-frame potential plus the Lorentz block.
pub fn build_linearization(equilibrium: &[Vec3], field: &ForceField) -> Result<Linearization> {
    let n = equilibrium.len();
    if n == 0 {
        return Err(Error::InvalidConfig("empty equilibrium".into()));
    }
    let ion = &field.ion;
    let m = ion.mass;
    let (kx, ky) = field.trap.radial_stiffness(ion);
    let kzz = m * field.trap.omega_z * field.trap.omega_z;
    let kq2 = COULOMB_K * ion.charge * ion.charge;

    let mut k = DMatrix::<f64>::zeros(3 * n, 3 * n);
    for i in 0..n {
        k[(3 * i, 3 * i)] = kx;
        k[(3 * i + 1, 3 * i + 1)] = ky;
        k[(3 * i + 2, 3 * i + 2)] = kzz;
    }
    for i in 0..n {
        for j in i + 1..n {
            let r = equilibrium[i] - equilibrium[j];
            if !(r.norm_squared() > 0.0) {
                return Err(Error::SingularConfiguration(i, j));
            }
            let b = coulomb_block(&r, kq2);
            for a in 0..3 {
                for c in 0..3 {
                    k[(3 * i + a, 3 * j + c)] -= b[(a, c)];
                    k[(3 * j + a, 3 * i + c)] -= b[(a, c)];
                    k[(3 * i + a, 3 * i + c)] += b[(a, c)];
                    k[(3 * j + a, 3 * j + c)] += b[(a, c)];
                }
            }
        }
    }

    let half_vortex = 0.5 * m * (field.trap.cyclotron_frequency(ion) - 2.0 * field.trap.omega_r);
    let mut w = DMatrix::<f64>::zeros(3 * n, 3 * n);
    for i in 0..n {
        w[(3 * i, 3 * i + 1)] = -half_vortex;
        w[(3 * i + 1, 3 * i)] = half_vortex;
    }

    Ok(Linearization {
        stiffness: k,
        lorentz: w,
        equilibrium: equilibrium.to_vec(),
        mass: m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "ExB")]
    ExB,
    #[serde(rename = "axial")]
    Axial,
    #[serde(rename = "cyclotron")]
    Cyclotron,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::ExB => "ExB",
            Branch::Axial => "axial",
            Branch::Cyclotron => "cyclotron",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModeSet {
    pub n_ions: usize,
    /// Ascending, rad/s.
    pub frequencies: Vec<f64>,
    /// Column n is u_n^r, normalized to unit length.
    pub positions: DMatrix<C64>,
    /// Column n is u_n^v = -i omega_n u_n^r.
    pub velocities: DMatrix<C64>,
    pub f_z: Vec<f64>,
    /// Potential-to-kinetic energy ratio R_n.
    pub pe_ke: Vec<f64>,
    pub branch: Vec<Branch>,
    /// Frequencies of modes treated as zero (rad/s), excluded from the
    /// branches.
    pub zero_modes: Vec<f64>,
    /// Largest ||D u - lambda u|| / (|lambda| ||u||) over the retained modes.
    pub residual: f64,
    stiffness: DMatrix<f64>,
    mass: f64,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn mode_positions(&self, n: usize) -> DVector<C64> {
        self.positions.column(n).into_owned()
    }

    pub fn mode_velocities(&self, n: usize) -> DVector<C64> {
        self.velocities.column(n).into_owned()
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// Indices of the modes in `branch`, ascending in frequency.
    pub fn branch_indices(&self, branch: Branch) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.branch[i] == branch).collect()
    }

    /// Energy-norm weight <u^r|K|u^r> + m <u^v|u^v> of mode n.
    fn energy_weight(&self, n: usize) -> f64 {
        let ur = self.positions.column(n);
        let uv = self.velocities.column(n);
        let kur = self.stiffness.map(C64::from) * ur;
        ur.dotc(&kur).re + self.mass * uv.norm_squared()
    }
}

/// Real-symmetric matrix square root with eigenvalues clamped at zero.
/// Returns the root and the extreme eigenvalues.
fn psd_sqrt(k: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
    let eig = SymmetricEigen::new(k.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    (0.5 * (&root + root.transpose()), min, max)
}

pub fn solve_modes(lin: &Linearization) -> Result<ModeSet> {
    let dim = lin.stiffness.nrows();
    let n_ions = dim / 3;
    let m = lin.mass;
    let (root, kmin, kmax) = psd_sqrt(&lin.stiffness);
    if kmin < -STABILITY_TOL * kmax {
        return Err(Error::UnstableEquilibrium(kmin));
    }

    // H = i A with A = [[0, B], [-B, -2W/m]]
    let b = root / m.sqrt();
    let mut h = DMatrix::<C64>::zeros(2 * dim, 2 * dim);
    for r in 0..dim {
        for c in 0..dim {
            let v = b[(r, c)];
            h[(r, dim + c)] = C64::new(0.0, v);
            h[(dim + r, c)] = C64::new(0.0, -v);
            h[(dim + r, dim + c)] = C64::new(0.0, -2.0 * lin.lorentz[(r, c)] / m);
        }
    }
    let eig = SymmetricEigen::new(h);
    let omega_max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));

    let mut order: Vec<usize> = (0..2 * dim).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut zero_modes = Vec::new();
    let mut kept = Vec::new();
    for i in order {
        let w = eig.eigenvalues[i];
        if w < ZERO_MODE_TOL * omega_max {
            zero_modes.push(w);
        } else {
            kept.push(i);
        }
    }
    // each zero mode of the real system shows up as a +-0 pair; keep one per pair
    let n_zero = (2 * dim - 2 * kept.len()) / 2;
    zero_modes.resize(n_zero, 0.0);

    let count = kept.len();
    let mut positions = DMatrix::<C64>::zeros(dim, count);
    let mut velocities = DMatrix::<C64>::zeros(dim, count);
    let mut frequencies = Vec::with_capacity(count);
    let k_c = lin.stiffness.map(C64::from);
    let w_c = lin.lorentz.map(C64::from);
    let mut residual: f64 = 0.0;
    for (col, &i) in kept.iter().enumerate() {
        let omega = eig.eigenvalues[i];
        let y = eig.eigenvectors.column(i);
        let mut uv: DVector<C64> = y.rows(dim, dim) / C64::from(m.sqrt());
        let mut ur: DVector<C64> = &uv * C64::new(0.0, 1.0 / omega);
        let scale = ur.norm();
        ur /= C64::from(scale);
        uv /= C64::from(scale);

        // D u = (u^v, -(K u^r + 2 W u^v)/m) against lambda u = -i omega u
        let lambda = C64::new(0.0, -omega);
        let top = &uv - &ur * lambda;
        let bottom = (&k_c * &ur + &w_c * &uv * C64::from(2.0)) / C64::from(-m) - &uv * lambda;
        let res = (top.norm_squared() + bottom.norm_squared()).sqrt() / (omega * (1.0 + uv.norm_squared()).sqrt());
        residual = residual.max(res);

        positions.set_column(col, &ur);
        velocities.set_column(col, &uv);
        frequencies.push(omega);
    }

    let f_z = (0..count).map(|n| axial_fraction_of(&positions.column(n).into_owned())).collect();
    let pe_ke = (0..count)
        .map(|n| pe_ke_ratio_of(&positions.column(n).into_owned(), &velocities.column(n).into_owned(), &lin.stiffness, m))
        .collect();

    let mut set = ModeSet {
        n_ions,
        frequencies,
        positions,
        velocities,
        f_z,
        pe_ke,
        branch: Vec::new(),
        zero_modes,
        residual,
        stiffness: lin.stiffness.clone(),
        mass: m,
    };
    set.branch = classify_branches(&set, n_ions);
    Ok(set)
}

fn axial_fraction_of(ur: &DVector<C64>) -> f64 {
    let total = ur.norm_squared();
    let axial: f64 = ur.iter().skip(2).step_by(3).map(|c| c.norm_sqr()).sum();
    axial / total
}

fn pe_ke_ratio_of(ur: &DVector<C64>, uv: &DVector<C64>, k: &DMatrix<f64>, m: f64) -> f64 {
    let kinetic = m * uv.norm_squared();
    if kinetic == 0.0 {
        return f64::INFINITY;
    }
    let kur = k.map(C64::from) * ur;
    ur.dotc(&kur).re / kinetic
}

/// Axial share <u^z|u^z>/<u^r|u^r> of mode `n`.
pub fn axial_fraction(modes: &ModeSet, n: usize) -> Result<f64> {
    let ur = modes.mode_positions(n);
    if ur.norm_squared() == 0.0 {
        return Err(Error::InvalidMode(format!("mode {n} has no position component")));
    }
    Ok(axial_fraction_of(&ur))
}

/// R_n = <u^r|K|u^r> / (m <u^v|u^v>); infinite when the velocity part vanishes.
pub fn pe_ke_ratio(modes: &ModeSet, n: usize, k: &DMatrix<f64>, mass: f64) -> f64 {
    pe_ke_ratio_of(&modes.mode_positions(n), &modes.mode_velocities(n), k, mass)
}

/// E x B: the `n_ions - zero modes` largest R_n. Cyclotron: the n_ions
/// highest frequencies among the rest. Axial: everything else.
pub fn classify_branches(modes: &ModeSet, n_ions: usize) -> Vec<Branch> {
    let count = modes.len();
    let n_exb = n_ions.saturating_sub(modes.zero_modes.len()).min(count);
    let mut by_r: Vec<usize> = (0..count).collect();
    by_r.sort_by(|&a, &b| modes.pe_ke[b].total_cmp(&modes.pe_ke[a]).then(a.cmp(&b)));
    let mut branch = vec![Branch::Axial; count];
    for &i in &by_r[..n_exb] {
        branch[i] = Branch::ExB;
    }
    let mut rest: Vec<usize> = (0..count).filter(|&i| branch[i] != Branch::ExB).collect();
    rest.sort_by(|&a, &b| modes.frequencies[b].total_cmp(&modes.frequencies[a]).then(a.cmp(&b)));
    for &i in rest.iter().take(n_ions) {
        branch[i] = Branch::Cyclotron;
    }
    branch
}

#[derive(Clone, Debug)]
pub struct Projection {
    /// Complex amplitude A_n per retained mode.
    pub amplitudes: Vec<C64>,
    /// Energy E_n = |A_n|^2 (<u^r|K|u^r> + m <u^v|u^v>) per mode, J.
    pub energies: Vec<f64>,
    /// ||q - sum_n (A_n u_n + c.c.)|| / ||q|| in energy-weighted norm.
    pub residual: f64,
}

/// Decomposes a rotating-frame state into mode amplitudes using the
/// energy-norm dual basis.
pub fn project_amplitudes(state: &SystemState, modes: &ModeSet, equilibrium: &[Vec3]) -> Result<Projection> {
    state.expect_frame(Frame::Rotating)?;
    let dim = 3 * equilibrium.len();
    if state.n_ions() != equilibrium.len() || dim != modes.positions.nrows() {
        return Err(Error::InvalidConfig("state, equilibrium and modes disagree on N".into()));
    }
    let dx = DVector::<C64>::from_iterator(
        dim,
        state
            .positions
            .iter()
            .zip(equilibrium)
            .flat_map(|(p, e)| {
                let d = p - e;
                [d.x, d.y, d.z]
            })
            .map(C64::from),
    );
    let v = DVector::<C64>::from_iterator(dim, state.velocities.iter().flat_map(|v| [v.x, v.y, v.z]).map(C64::from));
    let k_c = modes.stiffness.map(C64::from);
    let kdx = &k_c * &dx;
    let m = modes.mass;

    let mut amplitudes = Vec::with_capacity(modes.len());
    let mut energies = Vec::with_capacity(modes.len());
    let mut rec_x = DVector::<C64>::zeros(dim);
    let mut rec_v = DVector::<C64>::zeros(dim);
    for n in 0..modes.len() {
        let ur = modes.positions.column(n);
        let uv = modes.velocities.column(n);
        let weight = modes.energy_weight(n);
        let a = (ur.dotc(&kdx) + uv.dotc(&v) * C64::from(m)) / C64::from(weight);
        amplitudes.push(a);
        energies.push(a.norm_sqr() * weight);
        rec_x += ur * a;
        rec_v += uv * a;
    }
    // add complex conjugate partners
    let rec_x = rec_x.map(|c| C64::from(2.0 * c.re));
    let rec_v = rec_v.map(|c| C64::from(2.0 * c.re));
    let ex = &dx - rec_x;
    let ev = &v - rec_v;
    let energy_norm = |x: &DVector<C64>, v: &DVector<C64>| (x.dotc(&(&k_c * x)).re + m * v.norm_squared()).max(0.0).sqrt();
    let total = energy_norm(&dx, &v);
    let residual = if total == 0.0 { 0.0 } else { energy_norm(&ex, &ev) / total };
    Ok(Projection {
        amplitudes,
        energies: energies.into_iter().map(|e| 2.0 * e).collect(),
        residual,
    })
}

/// Quadratic energy (1/2) dx^T K dx + (1/2) m v^2 of a rotating-frame state.
pub fn linearized_energy(state: &SystemState, lin: &Linearization) -> f64 {
    let dim = lin.stiffness.nrows();
    let dx = DVector::<f64>::from_iterator(
        dim,
        state.positions.iter().zip(&lin.equilibrium).flat_map(|(p, e)| {
            let d = p - e;
            [d.x, d.y, d.z]
        }),
    );
    0.5 * dx.dot(&(&lin.stiffness * &dx)) + 0.5 * lin.mass * state.velocities.iter().map(|v| v.norm_squared()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{equilibrate, EquilibrateSettings};
    use crate::model::{IonSpecies, TrapConfig};
    use crate::rng::{stage, stage_rng};
    use approx::assert_relative_eq;

    fn field(omega_r_khz: f64, delta: f64) -> ForceField {
        ForceField::direct(
            TrapConfig::from_hz(4.4588, 1.59e6, omega_r_khz * 1e3, delta),
            IonSpecies::beryllium9(),
        )
    }

    fn crystal(n: usize, f: &ForceField) -> Vec<Vec3> {
        equilibrate(n, f, &EquilibrateSettings::default(), &mut stage_rng(1, stage::SEED_CLOUD))
            .unwrap()
            .positions
    }

    #[test]
    fn single_ion_linearization() {
        let f = field(400.0, 0.0);
        let lin = build_linearization(&[Vec3::zeros()], &f).unwrap();
        let m = f.ion.mass;
        let (wc, wr, wz) = (f.trap.cyclotron_frequency(&f.ion), f.trap.omega_r, f.trap.omega_z);
        let kr = m * (wc * wr - wr * wr - 0.5 * wz * wz);
        assert_relative_eq!(lin.stiffness, DMatrix::from_diagonal(&DVector::from_vec(vec![kr, kr, m * wz * wz])), max_relative = 1e-14);
        assert_relative_eq!(lin.lorentz[(1, 0)], 0.5 * m * (wc - 2.0 * wr));
        assert_eq!(lin.lorentz.transpose(), -lin.lorentz.clone());
    }

    #[test]
    fn single_ion_modes() {
        let f = field(400.0, 0.0);
        let modes = solve_modes(&build_linearization(&[Vec3::zeros()], &f).unwrap()).unwrap();
        let (wc, wr, wz) = (f.trap.cyclotron_frequency(&f.ion), f.trap.omega_r, f.trap.omega_z);
        let root = (0.25 * wc * wc - 0.5 * wz * wz).sqrt();
        let (plus, minus) = (0.5 * wc + root, 0.5 * wc - root);
        let expected = [wr - minus, wz, plus - wr];
        for (got, want) in modes.frequencies.iter().zip(expected) {
            assert_relative_eq!(*got, want, max_relative = 1e-9);
        }
        assert_eq!(modes.branch, vec![Branch::ExB, Branch::Axial, Branch::Cyclotron]);
        assert!(modes.pe_ke[0] > 1.0 && modes.pe_ke[2] < 1.0);
        assert_relative_eq!(modes.pe_ke[1], 1.0, max_relative = 1e-12);
        assert_relative_eq!(modes.f_z[1], 1.0, max_relative = 1e-12);
        assert!(modes.f_z[0] < 1e-12 && modes.f_z[2] < 1e-12);
        assert!(modes.residual < 1e-10);
    }

    #[test]
    fn coulomb_hessian_annihilates_translations() {
        let f = field(400.0, 0.0104);
        let pos = crystal(10, &f);
        let lin = build_linearization(&pos, &f).unwrap();
        let trap_only = build_linearization(&[Vec3::zeros()], &f).unwrap().stiffness;
        for a in 0..3 {
            let t = DVector::<f64>::from_fn(30, |r, _| if r % 3 == a { 1.0 } else { 0.0 });
            let kt = &lin.stiffness * &t;
            for i in 0..10 {
                assert_relative_eq!(kt[3 * i + a], trap_only[(a, a)], max_relative = 1e-9);
            }
        }
        assert_relative_eq!(lin.stiffness.clone(), lin.stiffness.transpose(), max_relative = 1e-12);
    }

    #[test]
    fn crystal_spectrum_structure() {
        let f = field(400.0, 0.0104);
        let pos = crystal(20, &f);
        let modes = solve_modes(&build_linearization(&pos, &f).unwrap()).unwrap();
        assert_eq!(modes.len(), 60);
        assert!(modes.zero_modes.is_empty());
        // slow modes carry roundoff amplified by (omega_max / omega)^2
        assert!(modes.residual < 1e-6, "{}", modes.residual);
        assert!(modes.frequencies.windows(2).all(|w| w[0] <= w[1]));
        assert!(modes.pe_ke.iter().all(|&r| r > 0.0));
        assert!(modes.f_z.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        let com = modes
            .frequencies
            .iter()
            .position(|&w| (w - f.trap.omega_z).abs() < 1e-9 * w)
            .expect("axial COM mode present");
        assert_relative_eq!(modes.f_z[com], 1.0, max_relative = 1e-8);
        for b in [Branch::ExB, Branch::Axial, Branch::Cyclotron] {
            assert_eq!(modes.branch_indices(b).len(), 20);
        }
    }

    #[test]
    fn rotational_zero_mode_without_wall() {
        let f = field(400.0, 0.0);
        let pos = crystal(12, &f);
        let modes = solve_modes(&build_linearization(&pos, &f).unwrap()).unwrap();
        assert_eq!(modes.zero_modes.len(), 1);
        assert_eq!(modes.len(), 35);
        assert_eq!(modes.branch_indices(Branch::ExB).len(), 11);
    }

    #[test]
    fn projection_of_equilibrium_vanishes_and_modes_round_trip() {
        let f = field(400.0, 0.0104);
        let pos = crystal(15, &f);
        let lin = build_linearization(&pos, &f).unwrap();
        let modes = solve_modes(&lin).unwrap();
        let rest = SystemState::at_rest(pos.clone(), Frame::Rotating).unwrap();
        let p = project_amplitudes(&rest, &modes, &pos).unwrap();
        assert!(p.amplitudes.iter().all(|a| a.norm() == 0.0));

        let pick = 17;
        let eps = 1e-9;
        let ur = modes.mode_positions(pick);
        let uv = modes.mode_velocities(pick);
        let positions = (0..15).map(|i| pos[i] + Vec3::new(ur[3 * i].re, ur[3 * i + 1].re, ur[3 * i + 2].re) * eps).collect();
        let velocities = (0..15).map(|i| Vec3::new(uv[3 * i].re, uv[3 * i + 1].re, uv[3 * i + 2].re) * eps).collect();
        let state = SystemState::new(positions, velocities, 0.0, Frame::Rotating).unwrap();
        let p = project_amplitudes(&state, &modes, &pos).unwrap();
        let dominant = (0..modes.len()).max_by(|&a, &b| p.amplitudes[a].norm().total_cmp(&p.amplitudes[b].norm())).unwrap();
        assert_eq!(dominant, pick);
        assert!(p.residual < 1e-8, "{}", p.residual);
        let total: f64 = p.energies.iter().sum();
        assert_relative_eq!(total, linearized_energy(&state, &lin), max_relative = 1e-6);
    }

    #[test]
    fn unstable_configuration_is_rejected() {
        // two ions stacked axially at 400 kHz: the radial direction is softer
        let f = field(400.0, 0.0);
        let m = f.ion.mass;
        let kzz = m * f.trap.omega_z.powi(2);
        let r = (COULOMB_K * f.ion.charge.powi(2) / (4.0 * kzz)).cbrt();
        let lin = build_linearization(&[Vec3::new(0.0, 0.0, r), Vec3::new(0.0, 0.0, -r)], &f).unwrap();
        assert!(matches!(solve_modes(&lin), Err(Error::UnstableEquilibrium(_))));
    }
}
