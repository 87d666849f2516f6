//! Octree Coulomb solver with Cartesian multipole expansions of arbitrary order.
//!
//! Each cell stores moments m_k = sum_j (y_j - c)^k about its charge centroid c
//! for every multi-index |k| <= order. A target at x accepts a cell when
//! `radius < theta * |x - c|`, where `radius` is the largest particle distance
//! from c, and evaluates the Taylor expansion of 1/|x - y| in y about c. The
//! Taylor coefficients a_k = D_y^k (1/|x - y|) / k! follow the three-term
//! recurrence
//!
//! ```text
//! |r|^2 a_k = (2 - 1/|k|) sum_i r_i a_{k-e_i} - (1 - 1/|k|) sum_i a_{k-2e_i},  r = x - c
//! ```
//!
//! and the field is E_i = sum_k (k_i + 1) a_{k+e_i} m_k.

use rayon::prelude::*;

use super::direct::coulomb_direct;
use crate::error::{Error, Result};
use crate::model::{Vec3, COULOMB_K};

pub const DEFAULT_LEAF_CAPACITY: usize = 16;
/// Smallest order keeping the worst-case relative force error of uniform
/// clouds below 1e-4 at theta = 0.3, with margin.
pub const DEFAULT_ORDER: usize = 8;
pub const DEFAULT_THETA: f64 = 0.3;
const MAX_DEPTH: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeSettings {
    pub theta: f64,
    pub order: usize,
    pub leaf_capacity: usize,
}

impl TreeSettings {
    pub fn new(theta: f64, order: usize) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidConfig(format!("opening angle {theta} not in (0, 1]")));
        }
        Ok(TreeSettings {
            theta,
            order,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
        })
    }
}

/// Tree-approximated Coulomb forces and energy. Falls back to the exact sum
/// when every ion fits into a single leaf.
pub fn coulomb_tree(positions: &[Vec3], charge: f64, theta: f64, order: usize) -> Result<(Vec<Vec3>, f64)> {
    coulomb_tree_with(positions, charge, &TreeSettings::new(theta, order)?)
}

pub fn coulomb_tree_with(positions: &[Vec3], charge: f64, settings: &TreeSettings) -> Result<(Vec<Vec3>, f64)> {
    if !(settings.theta > 0.0 && settings.theta <= 1.0) {
        return Err(Error::InvalidConfig(format!("opening angle {} not in (0, 1]", settings.theta)));
    }
    if positions.len() <= settings.leaf_capacity.max(1) {
        return coulomb_direct(positions, charge);
    }
    let tree = Octree::build(positions, settings)?;
    let scale = COULOMB_K * charge * charge;
    let rows: Vec<(Vec3, f64, f64)> = (0..positions.len())
        .into_par_iter()
        .map(|i| tree.evaluate(i))
        .collect();

    let mut forces = Vec::with_capacity(rows.len());
    let mut potential = 0.0;
    let mut min_r2 = f64::INFINITY;
    for (f, p, m) in rows {
        forces.push(f * scale);
        potential += p;
        min_r2 = min_r2.min(m);
    }
    if !(min_r2 > 0.0) {
        // recover the offending pair from the exact path
        return coulomb_direct(positions, charge);
    }
    Ok((forces, 0.5 * potential * scale))
}

/// Multi-indices up to a total degree, sorted by degree.
struct MultiIndices {
    max_degree: usize,
    list: Vec<[usize; 3]>,
    lookup: Vec<usize>,
    /// Per multi-index k: (1 - 1/|k|) terms and indices of k - e_i, k - 2e_i
    /// (`NONE` when absent), for the coefficient recurrence.
    recurrence: Vec<Recurrence>,
}

const NONE: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Recurrence {
    c1: f64,
    c2: f64,
    once: [usize; 3],
    twice: [usize; 3],
}

impl MultiIndices {
    fn new(max_degree: usize) -> Self {
        let side = max_degree + 1;
        let mut list = Vec::new();
        let mut lookup = vec![usize::MAX; side * side * side];
        for degree in 0..=max_degree {
            for a in (0..=degree).rev() {
                for b in (0..=degree - a).rev() {
                    let c = degree - a - b;
                    lookup[(a * side + b) * side + c] = list.len();
                    list.push([a, b, c]);
                }
            }
        }
        let mut table = MultiIndices {
            max_degree,
            list,
            lookup,
            recurrence: Vec::new(),
        };
        table.recurrence = table
            .list
            .iter()
            .map(|k| {
                let n = (k[0] + k[1] + k[2]) as f64;
                let mut once = [NONE; 3];
                let mut twice = [NONE; 3];
                for axis in 0..3 {
                    let mut lower = *k;
                    if lower[axis] >= 1 {
                        lower[axis] -= 1;
                        once[axis] = table.index(lower);
                    }
                    if lower[axis] >= 1 {
                        lower[axis] -= 1;
                        twice[axis] = table.index(lower);
                    }
                }
                Recurrence {
                    c1: if n > 0.0 { 2.0 - 1.0 / n } else { 0.0 },
                    c2: if n > 0.0 { 1.0 - 1.0 / n } else { 0.0 },
                    once,
                    twice,
                }
            })
            .collect();
        table
    }

    /// Number of multi-indices with degree <= `degree`.
    fn count_to(degree: usize) -> usize {
        (degree + 1) * (degree + 2) * (degree + 3) / 6
    }

    #[inline]
    fn index(&self, k: [usize; 3]) -> usize {
        let side = self.max_degree + 1;
        self.lookup[(k[0] * side + k[1]) * side + k[2]]
    }
}

struct Node {
    center: Vec3,
    radius: f64,
    start: usize,
    end: usize,
    children: Vec<usize>,
    moments: Vec<f64>,
}

struct Octree<'a> {
    positions: &'a [Vec3],
    order: usize,
    theta: f64,
    nodes: Vec<Node>,
    /// Particle indices, permuted so each node owns a contiguous range.
    perm: Vec<usize>,
    indices: MultiIndices,
    /// For each moment index k (|k| <= order): index of k + e_i for i = 0..3.
    raise: Vec<[usize; 3]>,
}

impl<'a> Octree<'a> {
    fn build(positions: &'a [Vec3], settings: &TreeSettings) -> Result<Self> {
        let order = settings.order;
        let indices = MultiIndices::new(order + 1);
        let n_moments = MultiIndices::count_to(order);
        let raise = indices.list[..n_moments]
            .iter()
            .map(|k| {
                [
                    indices.index([k[0] + 1, k[1], k[2]]),
                    indices.index([k[0], k[1] + 1, k[2]]),
                    indices.index([k[0], k[1], k[2] + 1]),
                ]
            })
            .collect();

        let mut tree = Octree {
            positions,
            order,
            theta: settings.theta,
            nodes: Vec::new(),
            perm: (0..positions.len()).collect(),
            indices,
            raise,
        };
        let (lo, hi) = bounds(positions);
        if !(lo.iter().all(|v| v.is_finite()) && hi.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidConfig("non-finite ion position".into()));
        }
        let half = 0.5 * (hi - lo).max() * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        let mid = 0.5 * (lo + hi);
        tree.split(0, positions.len(), mid, half, settings.leaf_capacity.max(1), 0);
        Ok(tree)
    }

    fn split(&mut self, start: usize, end: usize, mid: Vec3, half: f64, capacity: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        let (center, radius, moments) = self.summarize(start, end);
        self.nodes.push(Node {
            center,
            radius,
            start,
            end,
            children: Vec::new(),
            moments,
        });
        if end - start <= capacity || depth >= MAX_DEPTH {
            return id;
        }

        // bucket particles by octant, stable within each octant
        let octant = |p: &Vec3| -> usize {
            (usize::from(p.x >= mid.x)) | (usize::from(p.y >= mid.y) << 1) | (usize::from(p.z >= mid.z) << 2)
        };
        let mut buckets: [Vec<usize>; 8] = Default::default();
        for &i in &self.perm[start..end] {
            buckets[octant(&self.positions[i])].push(i);
        }
        let mut cursor = start;
        let mut ranges = Vec::with_capacity(8);
        for (o, bucket) in buckets.iter().enumerate() {
            let len = bucket.len();
            self.perm[cursor..cursor + len].copy_from_slice(bucket);
            if len > 0 {
                ranges.push((o, cursor, cursor + len));
            }
            cursor += len;
        }
        let quarter = 0.5 * half;
        let mut children = Vec::with_capacity(ranges.len());
        for (o, s, e) in ranges {
            let offset = Vec3::new(
                if o & 1 != 0 { quarter } else { -quarter },
                if o & 2 != 0 { quarter } else { -quarter },
                if o & 4 != 0 { quarter } else { -quarter },
            );
            children.push(self.split(s, e, mid + offset, quarter, capacity, depth + 1));
        }
        self.nodes[id].children = children;
        id
    }

    fn summarize(&self, start: usize, end: usize) -> (Vec3, f64, Vec<f64>) {
        let members = &self.perm[start..end];
        let count = members.len() as f64;
        let center = members.iter().map(|&i| self.positions[i]).sum::<Vec3>() / count;
        let radius = members
            .iter()
            .map(|&i| (self.positions[i] - center).norm())
            .fold(0.0, f64::max);

        let n_moments = MultiIndices::count_to(self.order);
        let mut moments = vec![0.0; n_moments];
        let p = self.order;
        let mut pow = vec![[0.0; 3]; p + 1];
        for &i in members {
            let d = self.positions[i] - center;
            pow[0] = [1.0; 3];
            for e in 1..=p {
                pow[e] = [pow[e - 1][0] * d.x, pow[e - 1][1] * d.y, pow[e - 1][2] * d.z];
            }
            for (m, k) in moments.iter_mut().zip(&self.indices.list[..n_moments]) {
                *m += pow[k[0]][0] * pow[k[1]][1] * pow[k[2]][2];
            }
        }
        (center, radius, moments)
    }

    /// Field (in units of charge * k_e) and potential at ion `target`, plus
    /// the smallest squared separation seen in direct interactions.
    fn evaluate(&self, target: usize) -> (Vec3, f64, f64) {
        let x = self.positions[target];
        let mut field = Vec3::zeros();
        let mut potential = 0.0;
        let mut min_r2 = f64::INFINITY;
        let mut coeffs = vec![0.0; self.indices.list.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let r = x - node.center;
            let d2 = r.norm_squared();
            if node.radius * node.radius < self.theta * self.theta * d2 {
                self.taylor_coefficients(&r, d2, &mut coeffs);
                let (phi, e) = self.apply_moments(&coeffs, &node.moments);
                potential += phi;
                field += e;
            } else if node.children.is_empty() {
                for &j in &self.perm[node.start..node.end] {
                    if j == target {
                        continue;
                    }
                    let dr = x - self.positions[j];
                    let r2 = dr.norm_squared();
                    let inv_r = 1.0 / r2.sqrt();
                    field += dr * (inv_r * inv_r * inv_r);
                    potential += inv_r;
                    min_r2 = min_r2.min(r2);
                }
            } else {
                // reverse so children are visited in octant order
                stack.extend(node.children.iter().rev());
            }
        }
        (field, potential, min_r2)
    }

    fn taylor_coefficients(&self, r: &Vec3, d2: f64, out: &mut [f64]) {
        let rr = [r.x, r.y, r.z];
        let inv_d2 = 1.0 / d2;
        out[0] = inv_d2.sqrt();
        for (idx, rec) in self.indices.recurrence.iter().enumerate().skip(1) {
            let mut first = 0.0;
            let mut second = 0.0;
            for axis in 0..3 {
                if rec.once[axis] != NONE {
                    first += rr[axis] * out[rec.once[axis]];
                }
                if rec.twice[axis] != NONE {
                    second += out[rec.twice[axis]];
                }
            }
            out[idx] = (rec.c1 * first - rec.c2 * second) * inv_d2;
        }
    }

    fn apply_moments(&self, coeffs: &[f64], moments: &[f64]) -> (f64, Vec3) {
        let mut phi = 0.0;
        let mut e = Vec3::zeros();
        for (idx, (&m, k)) in moments.iter().zip(&self.indices.list).enumerate() {
            phi += coeffs[idx] * m;
            let up = &self.raise[idx];
            e.x += (k[0] + 1) as f64 * coeffs[up[0]] * m;
            e.y += (k[1] + 1) as f64 * coeffs[up[1]] * m;
            e.z += (k[2] + 1) as f64 * coeffs[up[2]] * m;
        }
        (phi, e)
    }
}

fn bounds(positions: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}
