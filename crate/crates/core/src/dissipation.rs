//! Flux-density maps θ, dissipation pairs (Ψ, Ψ*), the densities G_Ψ*, G_Ψ
//! and the collision functionals D, D_Ψ*, R, R*.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::collision::{CollisionFlux, CollisionOperator, TupleRef};
use crate::error::{Error, Result};
use crate::state::Density;

/// Below this `|log(s/t)|` the logarithmic mean switches to its series.
const LOG_MEAN_SERIES: f64 = 1e-4;

fn check_pair(s: f64, t: f64) -> Result<()> {
    if !(s >= 0.0 && t >= 0.0) || !s.is_finite() || !t.is_finite() {
        return Err(Error::InvalidInput(format!("mean of ({s}, {t}) needs finite nonnegative arguments")));
    }
    Ok(())
}

/// `log s - log t` for positive arguments, without cancellation when `s ≈ t`.
#[inline]
pub fn log_ratio(s: f64, t: f64) -> f64 {
    let d = s - t;
    if d.abs() < 0.5 * t {
        (d / t).ln_1p()
    } else {
        s.ln() - t.ln()
    }
}

/// `Λ(s,t) = (s - t)/(log s - log t)`, `Λ(s,s) = s`, `Λ(0,t) = 0`.
pub fn log_mean(s: f64, t: f64) -> Result<f64> {
    check_pair(s, t)?;
    Ok(log_mean_unchecked(s, t))
}

#[inline]
pub(crate) fn log_mean_unchecked(s: f64, t: f64) -> f64 {
    if s == 0.0 || t == 0.0 {
        return 0.0;
    }
    if s == t {
        return s;
    }
    let x = log_ratio(s, t);
    if x.abs() < LOG_MEAN_SERIES {
        // Λ = √(st) sinh(y)/y with y = x/2
        let y2 = 0.25 * x * x;
        (s * t).sqrt() * (1.0 + y2 / 6.0 * (1.0 + y2 / 20.0 * (1.0 + y2 / 42.0)))
    } else {
        (s - t) / x
    }
}

/// `√(st)`.
pub fn geo_mean(s: f64, t: f64) -> Result<f64> {
    check_pair(s, t)?;
    Ok(geo_mean_unchecked(s, t))
}

#[inline]
fn geo_mean_unchecked(s: f64, t: f64) -> f64 {
    s.sqrt() * t.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxDensityMap {
    LogarithmicMean,
    GeometricMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiPair {
    Quadratic,
    Cosh,
}

/// A compatible `(θ, Ψ, Ψ*)` triple. Only the two compatible pairings exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipationStructure {
    /// `θ = Λ`, `Ψ = Ψ* = r²/2`.
    #[default]
    Quadratic,
    /// `θ = √(st)`, `Ψ*(ξ) = 4(cosh(ξ/2) - 1)`.
    Cosh,
}

/// `(Ψ(r), Ψ*(r), (Ψ*)'(r))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValues {
    pub psi: f64,
    pub psi_star: f64,
    pub psi_star_prime: f64,
}

impl DissipationStructure {
    pub fn from_parts(theta: FluxDensityMap, psi: PsiPair) -> Result<Self> {
        match (theta, psi) {
            (FluxDensityMap::LogarithmicMean, PsiPair::Quadratic) => Ok(DissipationStructure::Quadratic),
            (FluxDensityMap::GeometricMean, PsiPair::Cosh) => Ok(DissipationStructure::Cosh),
            _ => Err(Error::InvalidInput(format!("{theta:?} is not compatible with the {psi:?} pair"))),
        }
    }

    pub fn theta_map(self) -> FluxDensityMap {
        match self {
            DissipationStructure::Quadratic => FluxDensityMap::LogarithmicMean,
            DissipationStructure::Cosh => FluxDensityMap::GeometricMean,
        }
    }

    pub fn psi_pair(self) -> PsiPair {
        match self {
            DissipationStructure::Quadratic => PsiPair::Quadratic,
            DissipationStructure::Cosh => PsiPair::Cosh,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DissipationStructure::Quadratic => "quadratic",
            DissipationStructure::Cosh => "cosh",
        }
    }

    pub fn theta(self, s: f64, t: f64) -> Result<f64> {
        check_pair(s, t)?;
        Ok(self.theta_unchecked(s, t))
    }

    #[inline]
    pub(crate) fn theta_unchecked(self, s: f64, t: f64) -> f64 {
        match self {
            DissipationStructure::Quadratic => log_mean_unchecked(s, t),
            DissipationStructure::Cosh => geo_mean_unchecked(s, t),
        }
    }

    #[inline]
    pub fn psi(self, r: f64) -> f64 {
        match self {
            DissipationStructure::Quadratic => 0.5 * r * r,
            DissipationStructure::Cosh => {
                let q = (r * r + 4.0).sqrt();
                // 2r asinh(r/2) - 2√(r²+4) + 4, with √(r²+4) - 2 = r²/(√(r²+4) + 2)
                2.0 * r * (0.5 * r).asinh() - 2.0 * r * r / (q + 2.0)
            }
        }
    }

    #[inline]
    pub fn psi_star(self, xi: f64) -> f64 {
        match self {
            DissipationStructure::Quadratic => 0.5 * xi * xi,
            DissipationStructure::Cosh => {
                let h = (0.25 * xi).sinh();
                8.0 * h * h
            }
        }
    }

    #[inline]
    pub fn psi_star_prime(self, xi: f64) -> f64 {
        match self {
            DissipationStructure::Quadratic => xi,
            DissipationStructure::Cosh => 2.0 * (0.5 * xi).sinh(),
        }
    }

    pub fn psi_pair_eval(self, r: f64) -> PsiValues {
        PsiValues {
            psi: self.psi(r),
            psi_star: self.psi_star(r),
            psi_star_prime: self.psi_star_prime(r),
        }
    }

    /// `G_Ψ*(s,t) = ¼ Ψ*(log t - log s) θ(s,t)`, `+∞` where the quadratic
    /// density has exactly one vanishing argument.
    pub fn g_psi_star(self, s: f64, t: f64) -> Result<f64> {
        check_pair(s, t)?;
        Ok(self.g_psi_star_unchecked(s, t))
    }

    #[inline]
    pub(crate) fn g_psi_star_unchecked(self, s: f64, t: f64) -> f64 {
        match self {
            DissipationStructure::Quadratic => {
                if s == t {
                    0.0
                } else if s == 0.0 || t == 0.0 {
                    f64::INFINITY
                } else {
                    0.125 * (s - t) * log_ratio(s, t)
                }
            }
            DissipationStructure::Cosh => {
                let d = s.sqrt() - t.sqrt();
                0.5 * d * d
            }
        }
    }

    /// `G_Ψ(s,t,u) = ¼ Ψ(u/θ(s,t)) θ(s,t)`; `0` or `+∞` when `θ = 0`.
    pub fn g_psi(self, s: f64, t: f64, u: f64) -> Result<f64> {
        check_pair(s, t)?;
        if !u.is_finite() {
            return Err(Error::NonFinite("flux value".into()));
        }
        Ok(self.g_psi_unchecked(s, t, u))
    }

    #[inline]
    pub(crate) fn g_psi_unchecked(self, s: f64, t: f64, u: f64) -> f64 {
        let th = self.theta_unchecked(s, t);
        self.g_psi_theta(th, u)
    }

    #[inline]
    fn g_psi_theta(self, th: f64, u: f64) -> f64 {
        if th == 0.0 {
            return if u == 0.0 { 0.0 } else { f64::INFINITY };
        }
        match self {
            DissipationStructure::Quadratic => 0.125 * u * u / th,
            DissipationStructure::Cosh => 0.25 * self.psi(u / th) * th,
        }
    }
}

/// A tuple sum together with the number of tuples that hit a degenerate branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TupleSum {
    /// May be `+∞`.
    pub value: f64,
    /// Tuples skipped (D, R*) or forcing `+∞` (D_Ψ*, R).
    pub degenerate: usize,
}

impl TupleSum {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

fn counted_sweep<F>(op: &CollisionOperator, homogeneous: bool, symmetric: bool, term: F) -> TupleSum
where
    F: Fn(&TupleRef) -> Option<f64> + Sync,
{
    let bad = AtomicUsize::new(0);
    let value = op.sweep(homogeneous, symmetric, |t| match term(t) {
        Some(v) => v,
        None => {
            bad.fetch_add(1, Ordering::Relaxed);
            0.0
        }
    });
    let degenerate = bad.into_inner() * op.sweep_multiplicity(homogeneous, symmetric);
    TupleSum { value, degenerate }
}

/// `D(f) = ¼ Σ (t - s)(log t - log s) w`. Tuples with exactly one vanishing
/// product are skipped and counted.
pub fn entropy_dissipation(op: &CollisionOperator, f: &Density) -> TupleSum {
    if let Some(value) = op.dissipation_fast(f) {
        return TupleSum { value, degenerate: 0 };
    }
    entropy_dissipation_sweep(op, f)
}

/// [`entropy_dissipation`] by an explicit tuple sweep.
pub fn entropy_dissipation_sweep(op: &CollisionOperator, f: &Density) -> TupleSum {
    let vals = f.values();
    let mut out = counted_sweep(op, f.is_homogeneous(), true, |t| {
        let (s, u) = t.products(vals);
        if s == u {
            Some(0.0)
        } else if s == 0.0 || u == 0.0 {
            None
        } else {
            Some((u - s) * log_ratio(u, s))
        }
    });
    out.value *= 0.25;
    out
}

/// `D_Ψ*(f) = Σ G_Ψ*(ff_*, f'f'_*) w`.
pub fn d_psi_star(op: &CollisionOperator, f: &Density, structure: DissipationStructure) -> TupleSum {
    let vals = f.values();
    let out = counted_sweep(op, f.is_homogeneous(), true, |t| {
        let (s, u) = t.products(vals);
        let g = structure.g_psi_star_unchecked(s, u);
        if g.is_finite() { Some(g) } else { None }
    });
    if out.degenerate > 0 {
        TupleSum { value: f64::INFINITY, ..out }
    } else {
        out
    }
}

/// `R(f, U) = Σ G_Ψ(ff_*, f'f'_*, U) w`; `+∞` when `U ≠ 0` on a tuple with `θ(f) = 0`.
pub fn big_r(op: &CollisionOperator, f: &Density, flux: &CollisionFlux, structure: DissipationStructure) -> Result<TupleSum> {
    flux.check(op)?;
    if f.grid() != op.grid() {
        return Err(Error::InconsistentTuples("density lives on a different grid".into()));
    }
    let vals = f.values();
    let homogeneous = f.is_homogeneous() && flux.is_homogeneous();
    // both G_Ψ(s,t,u) and a true flux are invariant under pre/post exchange
    let symmetric = matches!(flux, CollisionFlux::True { .. });
    let out = counted_sweep(op, homogeneous, symmetric, |t| {
        let (s, u) = t.products(vals);
        let g = structure.g_psi_unchecked(s, u, flux.value(t));
        if g.is_finite() { Some(g) } else { None }
    });
    Ok(if out.degenerate > 0 { TupleSum { value: f64::INFINITY, ..out } } else { out })
}

/// `R*(f, ξ) = ¼ Σ_{θ(f)>0} Ψ*(ξ) θ(ff_*, f'f'_*) w`. `homogeneous` and
/// `symmetric` describe `ξ` as in [`CollisionOperator::sweep`].
pub fn big_r_star<F>(
    op: &CollisionOperator,
    f: &Density,
    structure: DissipationStructure,
    homogeneous: bool,
    symmetric: bool,
    xi: F,
) -> TupleSum
where
    F: Fn(&TupleRef) -> f64 + Sync,
{
    let vals = f.values();
    let mut out = counted_sweep(op, homogeneous && f.is_homogeneous(), symmetric, |t| {
        let (s, u) = t.products(vals);
        let th = structure.theta_unchecked(s, u);
        if th == 0.0 {
            return Some(0.0);
        }
        let x = xi(t);
        if x.is_finite() { Some(structure.psi_star(x) * th) } else { None }
    });
    out.value *= 0.25;
    out
}
