//! Collision kernel `B`, spatial kernel `k`, Japanese bracket, Gaussian
//! mollifiers and a sampled check of mollifier domination.
//!
//! The collision kernel family is `B(v - v_*, ω) = b0 · ⟨v - v_*⟩^μ · p(|cos|)`
//! where `cos` is the cosine between the relative velocity and `ω`. Because
//! a collision reflects the relative velocity across the plane orthogonal to
//! `ω`, `|v - v_*|` and `|cos|` are both collision invariants, so the kernel
//! is invariant under pre/post exchange and particle exchange by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|ω| = 1`.
pub const UNIT_TOL: f64 = 1e-12;

/// Japanese bracket `⟨z⟩ = sqrt(1 + |z|²)`.
pub fn bracket(z: &[f64]) -> Result<f64> {
    if z.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("bracket argument {z:?}")));
    }
    Ok(bracket_unchecked(z))
}

#[inline]
pub(crate) fn bracket_unchecked(z: &[f64]) -> f64 {
    (1.0 + z.iter().map(|c| c * c).sum::<f64>()).sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_unit(omega: &[f64]) -> Result<()> {
    let norm = dot(omega, omega).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitOmega { norm });
    }
    Ok(())
}

/// Angular factor of the collision kernel, a function of `|cos θ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularProfile {
    #[default]
    Uniform,
    /// `base + slope · |cos θ|`, with `base > 0` and `slope >= 0`.
    Affine { base: f64, slope: f64 },
}

impl AngularProfile {
    #[inline]
    pub fn value(&self, abs_cos: f64) -> f64 {
        match *self {
            AngularProfile::Uniform => 1.0,
            AngularProfile::Affine { base, slope } => base + slope * abs_cos,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            AngularProfile::Uniform => (1.0, 1.0),
            AngularProfile::Affine { base, slope } => (base, base + slope),
        }
    }

    fn validate(&self) -> Result<()> {
        if let AngularProfile::Affine { base, slope } = *self {
            if !(base > 0.0 && slope >= 0.0 && base.is_finite() && slope.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "angular profile needs base > 0 and slope >= 0, got base={base}, slope={slope}"
                )));
            }
        }
        Ok(())
    }
}

/// Collision kernel `B = b0 ⟨v - v_*⟩^μ p(|cos|)`, optionally capped at `m`
/// (the truncated kernel `B^m = min(B, m)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionKernel {
    pub mu: f64,
    pub b0: f64,
    #[serde(default)]
    pub profile: AngularProfile,
    #[serde(default)]
    pub cap: Option<f64>,
}

impl Default for CollisionKernel {
    fn default() -> Self {
        CollisionKernel {
            mu: 0.0,
            b0: 1.0,
            profile: AngularProfile::Uniform,
            cap: None,
        }
    }
}

impl CollisionKernel {
    pub fn new(mu: f64, b0: f64, profile: AngularProfile) -> Result<Self> {
        let kernel = CollisionKernel {
            mu,
            b0,
            profile,
            cap: None,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu <= 1.0) {
            return Err(Error::InvalidInput(format!("mu must lie in (-inf, 1], got {}", self.mu)));
        }
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(Error::InvalidInput(format!("b0 must be positive, got {}", self.b0)));
        }
        if let Some(m) = self.cap {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::InvalidInput(format!("truncation level must be positive, got {m}")));
            }
        }
        self.profile.validate()
    }

    /// `B(v_rel, ω)`; rejects non-unit `ω`.
    pub fn eval(&self, v_rel: &[f64], omega: &[f64]) -> Result<f64> {
        if v_rel.iter().chain(omega).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("collision kernel arguments".into()));
        }
        if v_rel.len() != omega.len() {
            return Err(Error::InvalidInput("v_rel and omega differ in dimension".into()));
        }
        check_unit(omega)?;
        Ok(self.eval_unchecked(v_rel, omega))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, v_rel: &[f64], omega: &[f64]) -> f64 {
        let speed2: f64 = dot(v_rel, v_rel);
        let abs_cos = if speed2 > 0.0 {
            (dot(v_rel, omega).abs() / speed2.sqrt()).min(1.0)
        } else {
            0.0
        };
        self.eval_parts(speed2, abs_cos)
    }

    #[inline]
    pub(crate) fn eval_parts(&self, speed2: f64, abs_cos: f64) -> f64 {
        let radial = if self.mu == 0.0 {
            1.0
        } else {
            (1.0 + speed2).powf(0.5 * self.mu)
        };
        let b = self.b0 * radial * self.profile.value(abs_cos);
        match self.cap {
            Some(m) => b.min(m),
            None => b,
        }
    }

    /// Supremum of `B` over relative speeds in `[0, rmax]`.
    pub fn sup_on_box(&self, rmax: f64) -> f64 {
        let (_, pmax) = self.profile.bounds();
        let r0 = 1.0f64;
        let r1 = (1.0 + rmax * rmax).sqrt();
        let radial = r0.powf(self.mu).max(r1.powf(self.mu));
        let b = self.b0 * pmax * radial;
        self.cap.map_or(b, |m| b.min(m))
    }

    /// Smallest `C_B` with `C_B⁻¹⟨v⟩^μ <= B <= C_B⟨v⟩^μ` for relative speeds
    /// in `[0, rmax]`. Without a cap the bound is global.
    pub fn bound_constant(&self, rmax: f64) -> f64 {
        let (pmin, pmax) = self.profile.bounds();
        let ratio = |r: f64, p: f64| {
            let br = (1.0 + r * r).powf(0.5 * self.mu);
            let b = self.b0 * p * br;
            self.cap.map_or(b, |m| b.min(m)) / br
        };
        // the ratio B/⟨v⟩^μ is monotone in r, so the endpoints suffice
        let hi = ratio(0.0, pmax).max(ratio(rmax, pmax));
        let lo = ratio(0.0, pmin).min(ratio(rmax, pmin));
        hi.max(1.0 / lo)
    }
}

/// Spatial kernel `k(z) = c exp(-γ⟨z⟩)`, folded onto the torus by summing
/// `images` periodic copies per axis in each direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernel {
    pub gamma: f64,
    pub c: f64,
    #[serde(default = "default_images")]
    pub images: usize,
}

fn default_images() -> usize {
    1
}

impl Default for SpatialKernel {
    fn default() -> Self {
        SpatialKernel {
            gamma: 1.0,
            c: 1.0,
            images: 1,
        }
    }
}

impl SpatialKernel {
    pub fn new(gamma: f64, c: f64, images: usize) -> Result<Self> {
        let kernel = SpatialKernel { gamma, c, images };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite() && self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spatial kernel needs gamma > 0 and c > 0, got gamma={}, c={}",
                self.gamma, self.c
            )));
        }
        Ok(())
    }

    /// Unfolded `k(z)` on `ℝ^d`.
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.c * (-self.gamma * bracket_unchecked(z)).exp()
    }

    /// Folded kernel on the torus of side `torus_side`; `x_rel` is first
    /// reduced to the fundamental domain so the result is exactly periodic.
    pub fn eval_torus(&self, x_rel: &[f64], torus_side: f64) -> Result<f64> {
        if x_rel.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("x_rel".into()));
        }
        if !(torus_side > 0.0 && torus_side.is_finite()) {
            return Err(Error::InvalidInput(format!("torus side must be positive, got {torus_side}")));
        }
        let d = x_rel.len();
        let span = 2 * self.images + 1;
        let total = span.pow(d as u32);
        let mut shifted = vec![0.0; d];
        let mut sum = 0.0;
        for flat in 0..total {
            let mut rest = flat;
            for (axis, s) in shifted.iter_mut().enumerate() {
                let m = (rest % span) as f64 - self.images as f64;
                rest /= span;
                let x = x_rel[axis] - torus_side * (x_rel[axis] / torus_side).round();
                *s = x + torus_side * m;
            }
            sum += self.eval(&shifted);
        }
        Ok(sum)
    }
}

/// Gaussian mollifier `M_β(z) = (2πβ)^{-d/2} exp(-|z|²/2β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub variance: f64,
    pub dimension: usize,
}

impl Mollifier {
    pub fn new(variance: f64, dimension: usize) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) || dimension == 0 {
            return Err(Error::InvalidInput(format!(
                "mollifier needs positive variance and dimension, got beta={variance}, d={dimension}"
            )));
        }
        Ok(Mollifier { variance, dimension })
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        let beta = self.variance;
        (2.0 * std::f64::consts::PI * beta).powf(-0.5 * self.dimension as f64)
            * (-dot(z, z) / (2.0 * beta)).exp()
    }

    /// Midpoint-rule mass of `M_β` on `[-halfwidth, halfwidth]^d`.
    pub fn mass_on_box(&self, halfwidth: f64, points_per_axis: usize) -> f64 {
        let d = self.dimension;
        let h = 2.0 * halfwidth / points_per_axis as f64;
        let total = points_per_axis.pow(d as u32);
        let mut z = vec![0.0; d];
        let mut sum = 0.0;
        for flat in 0..total {
            let mut rest = flat;
            for zc in z.iter_mut() {
                *zc = -halfwidth + ((rest % points_per_axis) as f64 + 0.5) * h;
                rest /= points_per_axis;
            }
            sum += self.density(&z);
        }
        sum * h.powi(d as i32)
    }
}

/// Sample points and quadrature resolution for the mollifier-domination check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub dimension: usize,
    pub halfwidth: f64,
    pub points_per_axis: usize,
    /// Gauss–Hermite nodes per axis; the check also runs at twice this count.
    pub quadrature_nodes: usize,
}

/// Maximum sampled ratio per kernel family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollifierReport {
    pub beta: f64,
    pub ratio_b: f64,
    pub ratio_b_inv: f64,
    pub ratio_k: f64,
    pub ratio_k_inv: f64,
    pub max_ratio: f64,
    /// Largest relative change of any sampled ratio between the declared
    /// quadrature resolution and its doubling.
    pub refinement_change: f64,
    /// Set when the refinement change exceeds 5%.
    pub resolution_flagged: bool,
    pub passed: bool,
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x²)`.
pub(crate) fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `(F * M_β)(v)` by tensor Gauss–Hermite quadrature.
fn convolve_gaussian(
    func: &dyn Fn(&[f64]) -> f64,
    v: &[f64],
    beta: f64,
    nodes: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let (x, w) = nodes;
    let n = x.len();
    let d = v.len();
    let scale = (2.0 * beta).sqrt();
    let norm = std::f64::consts::PI.powf(-0.5 * d as f64);
    let mut point = vec![0.0; d];
    let mut sum = 0.0;
    for flat in 0..n.pow(d as u32) {
        let mut rest = flat;
        let mut weight = norm;
        for (axis, p) in point.iter_mut().enumerate() {
            let idx = rest % n;
            rest /= n;
            *p = v[axis] - scale * x[idx];
            weight *= w[idx];
        }
        sum += weight * func(&point);
    }
    sum
}

/// Samples `(B*M_β)/B`, `(B⁻¹*M_β)/B⁻¹`, `(k*M_β)/k`, `(k⁻¹*M_β)/k⁻¹` over the
/// sample box (with `ω = e₁` for `B`) and reports the maxima against `c_limit`.
pub fn check_mollifier_domination(
    kernel: &CollisionKernel,
    spatial: &SpatialKernel,
    beta: f64,
    grid: &SampleGrid,
    c_limit: f64,
) -> Result<MollifierReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1), got {beta}")));
    }
    if grid.points_per_axis < 2 || grid.quadrature_nodes < 2 || grid.dimension == 0 {
        return Err(Error::InvalidInput("sample grid too small".into()));
    }
    kernel.validate()?;
    spatial.validate()?;
    let d = grid.dimension;
    let mut omega = vec![0.0; d];
    omega[0] = 1.0;
    let b = |z: &[f64]| kernel.eval_unchecked(z, &omega);
    let b_inv = |z: &[f64]| 1.0 / kernel.eval_unchecked(z, &omega);
    let k = |z: &[f64]| spatial.eval(z);
    let k_inv = |z: &[f64]| 1.0 / spatial.eval(z);
    let families: [&dyn Fn(&[f64]) -> f64; 4] = [&b, &b_inv, &k, &k_inv];

    let coarse = gauss_hermite(grid.quadrature_nodes);
    let fine = gauss_hermite(2 * grid.quadrature_nodes);
    let mut maxima = [0.0f64; 4];
    let mut change = 0.0f64;
    let n = grid.points_per_axis;
    let h = 2.0 * grid.halfwidth / (n - 1) as f64;
    let mut v = vec![0.0; d];
    for flat in 0..n.pow(d as u32) {
        let mut rest = flat;
        for vc in v.iter_mut() {
            *vc = -grid.halfwidth + (rest % n) as f64 * h;
            rest /= n;
        }
        for (slot, func) in families.iter().enumerate() {
            let base = func(&v);
            let r_coarse = convolve_gaussian(*func, &v, beta, &coarse) / base;
            let r_fine = convolve_gaussian(*func, &v, beta, &fine) / base;
            change = change.max(((r_fine - r_coarse) / r_fine).abs());
            maxima[slot] = maxima[slot].max(r_fine);
        }
    }
    let max_ratio = maxima.iter().cloned().fold(0.0, f64::max);
    Ok(MollifierReport {
        beta,
        ratio_b: maxima[0],
        ratio_b_inv: maxima[1],
        ratio_k: maxima[2],
        ratio_k_inv: maxima[3],
        max_ratio,
        refinement_change: change,
        resolution_flagged: change > 0.05,
        passed: max_ratio.is_finite() && max_ratio <= c_limit,
    })
}
