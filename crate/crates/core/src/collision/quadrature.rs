//! Sphere-quadrature velocity tuples with multilinear interpolation of the
//! post-collision velocities.

use crate::geometry::{collide_into, SphereQuadrature, VelocityLattice};
use crate::kernels::CollisionKernel;

/// Multilinear interpolation stencil: lower corner plus per-axis fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub base: u32,
    pub frac: [f64; 3],
}

/// Tolerance for snapping post-collision coordinates onto the lattice hull.
const HULL_TOL: f64 = 1e-12;

impl Stencil {
    /// `None` when `v` lies outside the convex hull of the lattice nodes.
    pub fn locate(lat: &VelocityLattice, v: &[f64]) -> Option<Stencil> {
        let h = lat.spacing();
        let top = (lat.nv - 1) as f64;
        let mut base = 0usize;
        let mut frac = [0.0; 3];
        let mut stride = 1usize;
        for (axis, &c) in v.iter().enumerate() {
            let t = (c + lat.vmax) / h - 0.5;
            if !(t >= -HULL_TOL && t <= top + HULL_TOL) {
                return None;
            }
            let mut t = t.clamp(0.0, top);
            if (t - t.round()).abs() < HULL_TOL {
                t = t.round();
            }
            let mut a = t.floor() as usize;
            if a >= lat.nv - 1 {
                a = lat.nv - 2;
            }
            frac[axis] = t - a as f64;
            base += a * stride;
            stride *= lat.nv;
        }
        Some(Stencil { base: base as u32, frac })
    }

    #[inline]
    pub fn eval(&self, d: usize, nv: usize, row: &[f64]) -> f64 {
        let b = self.base as usize;
        let [fx, fy, fz] = self.frac;
        match d {
            2 => {
                let lo = row[b] + fx * (row[b + 1] - row[b]);
                let hi = row[b + nv] + fx * (row[b + nv + 1] - row[b + nv]);
                lo + fy * (hi - lo)
            }
            _ => {
                let s = nv * nv;
                let plane = |o: usize| {
                    let lo = row[o] + fx * (row[o + 1] - row[o]);
                    let hi = row[o + nv] + fx * (row[o + nv + 1] - row[o + nv]);
                    lo + fy * (hi - lo)
                };
                let p0 = plane(b);
                let p1 = plane(b + s);
                p0 + fz * (p1 - p0)
            }
        }
    }

    /// Adds `c · α_n` to every stencil node `n` (transpose of [`Stencil::eval`]).
    #[inline]
    pub fn scatter(&self, d: usize, nv: usize, c: f64, out: &mut [f64]) {
        let b = self.base as usize;
        let [fx, fy, fz] = self.frac;
        let corners2 = |o: usize, w: f64, out: &mut [f64]| {
            let wy0 = w * (1.0 - fy);
            let wy1 = w * fy;
            out[o] += wy0 * (1.0 - fx);
            out[o + 1] += wy0 * fx;
            out[o + nv] += wy1 * (1.0 - fx);
            out[o + nv + 1] += wy1 * fx;
        };
        match d {
            2 => corners2(b, c, out),
            _ => {
                corners2(b, c * (1.0 - fz), out);
                corners2(b + nv * nv, c * fz, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct QuadTuple {
    pub j: u32,
    pub l: u32,
    pub post: Stencil,
    pub post_star: Stencil,
    /// `B(v_j - v_l, ω_m) · ω-weight_m`.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct QuadTuples {
    pub sphere: SphereQuadrature,
    pub tuples: Vec<QuadTuple>,
    /// Kernel weight of `(j, l, m)` triples dropped because a post-collision
    /// velocity left the lattice hull, relative to the total.
    pub dropped_fraction: f64,
}

impl QuadTuples {
    pub fn build(lat: &VelocityLattice, kernel: &CollisionKernel, sphere: SphereQuadrature) -> QuadTuples {
        let n = lat.len();
        let d = lat.dimension;
        let vel: Vec<Vec<f64>> = (0..n).map(|j| lat.velocity(j)).collect();
        let mut tuples = Vec::new();
        let mut kept = 0.0;
        let mut dropped = 0.0;
        let mut vp = vec![0.0; d];
        let mut vsp = vec![0.0; d];
        let mut rel = vec![0.0; d];
        for j in 0..n {
            for l in 0..n {
                if j == l {
                    continue;
                }
                for a in 0..d {
                    rel[a] = vel[j][a] - vel[l][a];
                }
                for m in 0..sphere.len() {
                    let omega = sphere.node(m);
                    let proj: f64 = rel.iter().zip(omega).map(|(a, b)| a * b).sum();
                    if proj == 0.0 {
                        continue;
                    }
                    let w = kernel.eval_unchecked(&rel, omega) * sphere.weights[m];
                    collide_into(&vel[j], &vel[l], omega, &mut vp, &mut vsp);
                    match (Stencil::locate(lat, &vp), Stencil::locate(lat, &vsp)) {
                        (Some(post), Some(post_star)) => {
                            kept += w;
                            tuples.push(QuadTuple { j: j as u32, l: l as u32, post, post_star, weight: w });
                        }
                        _ => dropped += w,
                    }
                }
            }
        }
        let total: f64 = kept + dropped;
        QuadTuples {
            sphere,
            tuples,
            dropped_fraction: if total > 0.0 { dropped / total } else { 0.0 },
        }
    }
}

/// Collision operator row for one cell:
/// `Q(n) = ½Δv^d Σ W [f(j)g(l) - F'G'](α_n(v') - δ_jn)`.
pub(crate) fn q_row(tuples: &[QuadTuple], d: usize, nv: usize, vel_vol: f64, f: &[f64], g: &[f64], out: &mut [f64]) {
    let half = 0.5 * vel_vol;
    for t in tuples {
        let s = f[t.j as usize] * g[t.l as usize];
        let u = t.post.eval(d, nv, f) * t.post_star.eval(d, nv, g);
        let c = half * t.weight * (s - u);
        t.post.scatter(d, nv, c, out);
        out[t.j as usize] -= c;
    }
}

/// Separable form of `Σ_r W (F'G' - f(j)g(l))(log F' - log f(j))` for one cell,
/// valid when `f > 0`.
pub(crate) fn dissipation_row(tuples: &[QuadTuple], d: usize, nv: usize, f: &[f64], logf: &[f64], g: &[f64]) -> f64 {
    let mut sum = 0.0;
    for t in tuples {
        let fp = t.post.eval(d, nv, f);
        let gp = t.post_star.eval(d, nv, g);
        let s = f[t.j as usize] * g[t.l as usize];
        sum += t.weight * (fp * gp - s) * (fp.ln() - logf[t.j as usize]);
    }
    sum
}
