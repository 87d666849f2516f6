//! Exact pairwise Coulomb sum.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Vec3, COULOMB_K};

/// Above this ion count the per-target parallel kernel is used. Below it the
/// sequential pair kernel (Newton's third law, half the work) runs. The choice
/// depends on N only, so results never depend on the thread count.
pub const PARALLEL_THRESHOLD: usize = 2048;

const LANES: usize = 4;

/// Exact Coulomb forces and potential energy (1/4 pi eps0) sum_{i<j} q^2/r_ij.
pub fn coulomb_direct(positions: &[Vec3], charge: f64) -> Result<(Vec<Vec3>, f64)> {
    let mut forces = vec![Vec3::zeros(); positions.len()];
    let potential = accumulate_direct(positions, charge, &mut forces)?;
    Ok((forces, potential))
}

/// Adds the Coulomb forces into `out` and returns the Coulomb energy.
pub fn accumulate_direct(positions: &[Vec3], charge: f64, out: &mut [Vec3]) -> Result<f64> {
    let n = positions.len();
    assert_eq!(out.len(), n);
    if n < 2 {
        return Ok(0.0);
    }
    let xs: Vec<f64> = positions.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = positions.iter().map(|p| p.y).collect();
    let zs: Vec<f64> = positions.iter().map(|p| p.z).collect();
    let scale = COULOMB_K * charge * charge;

    let (pot, min_r2) = if n > PARALLEL_THRESHOLD {
        per_target(&xs, &ys, &zs, scale, out)
    } else {
        pairwise(&xs, &ys, &zs, scale, out)
    };
    if !(min_r2 > 0.0) {
        return Err(singular_pair(positions));
    }
    Ok(pot)
}

fn singular_pair(positions: &[Vec3]) -> Error {
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let r2 = (positions[i] - positions[j]).norm_squared();
            if !(r2 > 0.0) {
                return Error::SingularConfiguration(i, j);
            }
        }
    }
    Error::SingularConfiguration(0, 0)
}

fn pairwise(xs: &[f64], ys: &[f64], zs: &[f64], scale: f64, out: &mut [Vec3]) -> (f64, f64) {
    let n = xs.len();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut fz = vec![0.0; n];
    let mut pot = 0.0;
    let mut min_r2 = f64::INFINITY;

    for i in 0..n - 1 {
        let (xi, yi, zi) = (xs[i], ys[i], zs[i]);
        let mut ax = [0.0; LANES];
        let mut ay = [0.0; LANES];
        let mut az = [0.0; LANES];
        let mut ap = [0.0; LANES];
        let mut am = [f64::INFINITY; LANES];

        let start = i + 1;
        let len = n - start;
        let body = len - len % LANES;
        let (xj, yj, zj) = (&xs[start..], &ys[start..], &zs[start..]);
        let (fx_head, fx_tail) = fx.split_at_mut(start);
        let (fy_head, fy_tail) = fy.split_at_mut(start);
        let (fz_head, fz_tail) = fz.split_at_mut(start);

        let mut k = 0;
        while k < body {
            for l in 0..LANES {
                let dx = xi - xj[k + l];
                let dy = yi - yj[k + l];
                let dz = zi - zj[k + l];
                let r2 = dx * dx + dy * dy + dz * dz;
                let inv_r = 1.0 / r2.sqrt();
                let inv_r3 = inv_r * inv_r * inv_r;
                let (gx, gy, gz) = (dx * inv_r3, dy * inv_r3, dz * inv_r3);
                ax[l] += gx;
                ay[l] += gy;
                az[l] += gz;
                ap[l] += inv_r;
                am[l] = am[l].min(r2);
                fx_tail[k + l] -= gx;
                fy_tail[k + l] -= gy;
                fz_tail[k + l] -= gz;
            }
            k += LANES;
        }
        let mut sx = (ax[0] + ax[1]) + (ax[2] + ax[3]);
        let mut sy = (ay[0] + ay[1]) + (ay[2] + ay[3]);
        let mut sz = (az[0] + az[1]) + (az[2] + az[3]);
        let mut sp = (ap[0] + ap[1]) + (ap[2] + ap[3]);
        let mut sm = am[0].min(am[1]).min(am[2].min(am[3]));
        while k < len {
            let dx = xi - xj[k];
            let dy = yi - yj[k];
            let dz = zi - zj[k];
            let r2 = dx * dx + dy * dy + dz * dz;
            let inv_r = 1.0 / r2.sqrt();
            let inv_r3 = inv_r * inv_r * inv_r;
            let (gx, gy, gz) = (dx * inv_r3, dy * inv_r3, dz * inv_r3);
            sx += gx;
            sy += gy;
            sz += gz;
            sp += inv_r;
            sm = sm.min(r2);
            fx_tail[k] -= gx;
            fy_tail[k] -= gy;
            fz_tail[k] -= gz;
            k += 1;
        }
        fx_head[i] += sx;
        fy_head[i] += sy;
        fz_head[i] += sz;
        pot += sp;
        min_r2 = min_r2.min(sm);
    }

    for (i, f) in out.iter_mut().enumerate() {
        *f += Vec3::new(fx[i], fy[i], fz[i]) * scale;
    }
    (pot * scale, min_r2)
}

fn per_target(xs: &[f64], ys: &[f64], zs: &[f64], scale: f64, out: &mut [Vec3]) -> (f64, f64) {
    let n = xs.len();
    let rows: Vec<(Vec3, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, yi, zi) = (xs[i], ys[i], zs[i]);
            let mut f = Vec3::zeros();
            let mut p = 0.0;
            let mut m = f64::INFINITY;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dx = xi - xs[j];
                let dy = yi - ys[j];
                let dz = zi - zs[j];
                let r2 = dx * dx + dy * dy + dz * dz;
                let inv_r = 1.0 / r2.sqrt();
                let inv_r3 = inv_r * inv_r * inv_r;
                f += Vec3::new(dx, dy, dz) * inv_r3;
                p += inv_r;
                m = m.min(r2);
            }
            (f, p, m)
        })
        .collect();
    let mut pot = 0.0;
    let mut min_r2 = f64::INFINITY;
    for (o, (f, p, m)) in out.iter_mut().zip(rows) {
        *o += f * scale;
        pot += p;
        min_r2 = min_r2.min(m);
    }
    (0.5 * pot * scale, min_r2)
}
