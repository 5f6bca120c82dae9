//! Trajectories `(f_t, U_t)`, residuals of the transport collision rate
//! equation, the chain-rule defect, the functional `L_T` and the entropy
//! identity.

use serde::Serialize;

use crate::collision::{CollisionFlux, CollisionOperator};
use crate::dissipation::{big_r, d_psi_star, entropy_dissipation, DissipationStructure};
use crate::error::{Error, Result};
use crate::generic::spectral_dx;
use crate::state::{entropy, Density, PhaseGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Solver,
    Loaded,
}

/// Densities at increasing times and one flux per interval.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    densities: Vec<Density>,
    fluxes: Vec<CollisionFlux>,
    source: TrajectorySource,
}

impl Trajectory {
    /// `fluxes` is empty or holds one flux per interval.
    pub fn new(times: Vec<f64>, densities: Vec<Density>, fluxes: Vec<CollisionFlux>, source: TrajectorySource) -> Result<Self> {
        if times.is_empty() || times.len() != densities.len() {
            return Err(Error::InvalidInput(format!(
                "{} times for {} densities",
                times.len(),
                densities.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("times must be finite and strictly increasing".into()));
        }
        let grid = *densities[0].grid();
        if densities.iter().any(|f| *f.grid() != grid) {
            return Err(Error::InconsistentTuples("densities live on different grids".into()));
        }
        if !fluxes.is_empty() && fluxes.len() + 1 != times.len() {
            return Err(Error::InvalidInput(format!(
                "{} fluxes for {} intervals",
                fluxes.len(),
                times.len() - 1
            )));
        }
        Ok(Trajectory { times, densities, fluxes, source })
    }

    /// Attaches `U_n = ff_* - f'f'_*` at the interval midpoints `½(f_n + f_{n+1})`.
    pub fn with_midpoint_true_flux(mut self, op: &CollisionOperator) -> Result<Self> {
        self.fluxes = self
            .densities
            .windows(2)
            .map(|w| Ok(op.true_flux(&midpoint(&w[0], &w[1])?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self)
    }

    /// The same densities with every flux multiplied by `factor`.
    pub fn with_scaled_flux(&self, factor: f64) -> Trajectory {
        Trajectory {
            fluxes: self.fluxes.iter().map(|u| u.scaled(factor)).collect(),
            ..self.clone()
        }
    }

    /// Replaces the fluxes.
    pub fn with_fluxes(&self, fluxes: Vec<CollisionFlux>) -> Result<Trajectory> {
        Trajectory::new(self.times.clone(), self.densities.clone(), fluxes, self.source)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn densities(&self) -> &[Density] {
        &self.densities
    }

    pub fn fluxes(&self) -> &[CollisionFlux] {
        &self.fluxes
    }

    pub fn source(&self) -> TrajectorySource {
        self.source
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.densities[0].grid()
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    fn require_fluxes(&self, op: &CollisionOperator) -> Result<()> {
        if self.grid() != op.grid() {
            return Err(Error::InconsistentTuples("trajectory and operator grids differ".into()));
        }
        if self.fluxes.len() != self.intervals() {
            return Err(Error::InvalidInput("trajectory carries no fluxes".into()));
        }
        for u in &self.fluxes {
            u.check(op)?;
        }
        Ok(())
    }
}

fn midpoint(a: &Density, b: &Density) -> Result<Density> {
    let v = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
    Density::nonnegative(*a.grid(), v)
}

/// The test functions `1`, `v₁`, `|v|²`.
pub fn standard_test_functions(grid: &PhaseGrid) -> Vec<Vec<f64>> {
    vec![vec![1.0; grid.len()], grid.velocity_field(0), grid.speed_squared_field()]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcreReport {
    /// Max over intervals, per test function.
    pub per_function: Vec<f64>,
    pub max: f64,
}

/// Residual of `d/dt ∫φ f - ∫ v·∇_xφ f = ¼ Σ ∇̄φ U w` per interval, with
/// midpoint evaluation of the right-hand side.
pub fn tcre_residual(op: &CollisionOperator, traj: &Trajectory, test_functions: &[Vec<f64>]) -> Result<TcreReport> {
    traj.require_fluxes(op)?;
    let grid = *op.grid();
    if test_functions.is_empty() || test_functions.iter().any(|p| p.len() != grid.len()) {
        return Err(Error::InvalidInput("test functions must be grid functions".into()));
    }
    let mut per_function = Vec::with_capacity(test_functions.len());
    for phi in test_functions {
        // v·∇_x φ
        let mut vgrad = vec![0.0; grid.len()];
        if !grid.is_homogeneous(phi) {
            for axis in 0..grid.d {
                let d = spectral_dx(&grid, phi, axis);
                let v = grid.velocity_field(axis);
                for ((o, a), b) in vgrad.iter_mut().zip(&d).zip(&v) {
                    *o += a * b;
                }
            }
        }
        let mut worst = 0.0f64;
        for n in 0..traj.intervals() {
            let (a, b) = (&traj.densities[n], &traj.densities[n + 1]);
            let dt = traj.times[n + 1] - traj.times[n];
            let change = grid.inner(phi, b.values()) - grid.inner(phi, a.values());
            let mid = midpoint(a, b)?;
            let transport = grid.inner(&vgrad, mid.values());
            let collision = op.pairing(phi, &traj.fluxes[n])?;
            worst = worst.max((change - dt * (transport + collision)).abs());
        }
        per_function.push(worst);
    }
    let max = per_function.iter().cloned().fold(0.0, f64::max);
    Ok(TcreReport { per_function, max })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRuleReport {
    pub max_defect: f64,
    /// Tuples carrying flux where `θ(f) = 0`, summed over intervals.
    pub degenerate_flux_tuples: usize,
}

/// `max_n |ΔH - Δt ¼ Σ_{θ>0} ∇̄ log f · U w|` with `f = ½(f_n + f_{n+1})`.
pub fn chain_rule_defect(op: &CollisionOperator, traj: &Trajectory) -> Result<ChainRuleReport> {
    traj.require_fluxes(op)?;
    let mut report = ChainRuleReport { max_defect: 0.0, degenerate_flux_tuples: 0 };
    for n in 0..traj.intervals() {
        let (a, b) = (&traj.densities[n], &traj.densities[n + 1]);
        let dt = traj.times[n + 1] - traj.times[n];
        let mid = midpoint(a, b)?;
        let flux = &traj.fluxes[n];
        let rate = if mid.is_strictly_positive() {
            let logf: Vec<f64> = mid.values().iter().map(|x| x.ln()).collect();
            op.pairing(&logf, flux)?
        } else {
            let vals = mid.values();
            let logf: Vec<f64> = vals.iter().map(|&x| if x > 0.0 { x.ln() } else { 0.0 }).collect();
            let bad = std::sync::atomic::AtomicUsize::new(0);
            let s = op.sweep(false, false, |t| {
                let (p0, p1) = t.pre(vals);
                let (q0, q1) = t.post(vals);
                let u = flux.value(t);
                if p0 > 0.0 && p1 > 0.0 && q0 > 0.0 && q1 > 0.0 {
                    t.gradbar(&logf) * u
                } else {
                    if u != 0.0 {
                        bad.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    }
                    0.0
                }
            });
            report.degenerate_flux_tuples += bad.into_inner();
            0.25 * s
        };
        let dh = entropy(b) - entropy(a);
        report.max_defect = report.max_defect.max((dh - dt * rate).abs());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyIdentityReport {
    /// `max_n |H(f_n) - H(f_0) + ∫_0^{t_n} D|`.
    pub max_defect: f64,
    /// Signed value at the final time.
    pub final_defect: f64,
    pub delta_h: f64,
    pub integral_d: f64,
}

/// Trapezoid check of `H(f_t) - H(f_0) = -∫ D(f_s) ds`.
pub fn entropy_identity_defect(op: &CollisionOperator, traj: &Trajectory) -> Result<EntropyIdentityReport> {
    if traj.grid() != op.grid() {
        return Err(Error::InconsistentTuples("trajectory and operator grids differ".into()));
    }
    let h0 = entropy(&traj.densities[0]);
    let d: Vec<f64> = traj.densities.iter().map(|f| entropy_dissipation(op, f).value).collect();
    let mut integral = 0.0;
    let mut max_defect = 0.0f64;
    let mut last = 0.0;
    for n in 0..traj.intervals() {
        integral += 0.5 * (d[n] + d[n + 1]) * (traj.times[n + 1] - traj.times[n]);
        last = entropy(&traj.densities[n + 1]) - h0 + integral;
        max_defect = max_defect.max(last.abs());
    }
    Ok(EntropyIdentityReport {
        max_defect,
        final_defect: last,
        delta_h: entropy(&traj.densities[traj.intervals()]) - h0,
        integral_d: integral,
    })
}

/// `L_T = H(f_T) - H(f_0) + ∫ D_Ψ*(f_t) + R(f_t, U_t) dt` and its parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LFunctional {
    pub structure: DissipationStructure,
    pub l_t: f64,
    pub delta_h: f64,
    pub integral_d_psi_star: f64,
    pub integral_r: f64,
    /// Estimated time-quadrature error plus a roundoff floor.
    pub tol_num: f64,
    /// First interval where a term is `+∞`.
    pub infinite_at: Option<usize>,
}

/// Roundoff floor of `tol_num`, relative to the magnitudes involved.
const ROUNDOFF: f64 = 1e-12;

pub fn l_functional(op: &CollisionOperator, traj: &Trajectory, structure: DissipationStructure) -> Result<LFunctional> {
    traj.require_fluxes(op)?;
    let n_int = traj.intervals();
    let dps: Vec<f64> = traj.densities.iter().map(|f| d_psi_star(op, f, structure).value).collect();
    let mut infinite_at = dps.iter().position(|x| !x.is_finite()).map(|k| k.saturating_sub(1).min(n_int.saturating_sub(1)));
    let mut int_dps = 0.0;
    let mut int_r = 0.0;
    let mut r_avg = Vec::with_capacity(n_int);
    for n in 0..n_int {
        let dt = traj.times[n + 1] - traj.times[n];
        int_dps += 0.5 * (dps[n] + dps[n + 1]) * dt;
        let u = &traj.fluxes[n];
        let r0 = big_r(op, &traj.densities[n], u, structure)?.value;
        let r1 = big_r(op, &traj.densities[n + 1], u, structure)?.value;
        if !(r0.is_finite() && r1.is_finite()) && infinite_at.is_none() {
            infinite_at = Some(n);
        }
        r_avg.push(0.5 * (r0 + r1));
        int_r += 0.5 * (r0 + r1) * dt;
    }
    let h0 = entropy(&traj.densities[0]);
    let h1 = entropy(&traj.densities[n_int]);
    let delta_h = h1 - h0;
    let l_t = delta_h + int_dps + int_r;
    // trapezoid error ~ Δt/12 Σ second differences of the integrand
    let second_diff = |h: &[f64]| -> f64 { h.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).sum::<f64>() };
    let dt_max = traj.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let quad = dt_max / 12.0 * (second_diff(&dps).abs() + second_diff(&r_avg).abs());
    let floor = ROUNDOFF * (h0.abs() + h1.abs() + int_dps.abs() + int_r.abs());
    Ok(LFunctional {
        structure,
        l_t,
        delta_h,
        integral_d_psi_star: int_dps,
        integral_r: int_r,
        tol_num: if quad.is_finite() { quad + floor } else { floor },
        infinite_at,
    })
}

/// Everything the audit reports for one trajectory and structure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub tcre_residual_max: f64,
    pub tcre_per_function: Vec<f64>,
    pub chain_rule_defect: f64,
    pub degenerate_flux_tuples: usize,
    pub entropy_identity_defect: f64,
    pub l: LFunctional,
}

pub fn audit(op: &CollisionOperator, traj: &Trajectory, structure: DissipationStructure) -> Result<AuditReport> {
    let tcre = tcre_residual(op, traj, &standard_test_functions(op.grid()))?;
    let chain = chain_rule_defect(op, traj)?;
    let ident = entropy_identity_defect(op, traj)?;
    Ok(AuditReport {
        tcre_residual_max: tcre.max,
        tcre_per_function: tcre.per_function,
        chain_rule_defect: chain.max_defect,
        degenerate_flux_tuples: chain.degenerate_flux_tuples,
        entropy_identity_defect: ident.max_defect,
        l: l_functional(op, traj, structure)?,
    })
}

#[cfg(test)]
mod tests;
