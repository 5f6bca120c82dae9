//! Time integration: exact-characteristic transport, collision steppers,
//! Strang splitting and the monotone existence iteration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{Backend, CollisionFlux, CollisionOperator};
use crate::dissipation::entropy_dissipation;
use crate::error::{Error, Result};
use crate::kernels::{CollisionKernel, SpatialKernel};
use crate::state::{moments, Density, PhaseGrid};
use crate::variational::{Trajectory, TrajectorySource};

/// Shifts within this distance of an integer are treated as grid aligned.
const ALIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    /// Transport, then one explicit Euler collision step.
    Euler,
    /// Transport, then the damped variation-of-constants step.
    Duhamel,
    /// Half transport, Heun collision step, half transport.
    #[default]
    Strang,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub backend: Backend,
    #[serde(default)]
    pub stepper: Stepper,
    /// Kernel cap `B^m = min(B, m)`.
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub record_flux: bool,
    #[serde(default = "default_true")]
    pub positivity_guard: bool,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidInput(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::InvalidInput(format!("truncation level must be positive, got {m}")));
            }
        }
        self.steps().map(|_| ())
    }

    /// Number of steps; `t_end` must be a multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::InvalidInput(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }

    /// Collision operator with the configured backend and kernel truncation.
    pub fn build_operator(&self, grid: PhaseGrid, kernel: CollisionKernel, spatial: SpatialKernel) -> Result<CollisionOperator> {
        let kernel = match self.truncation {
            Some(m) => truncate_kernel(&kernel, m)?,
            None => kernel,
        };
        CollisionOperator::new(grid, kernel, spatial, self.backend)
    }
}

/// `B^m = min(B, m)`.
pub fn truncate_kernel(kernel: &CollisionKernel, m: f64) -> Result<CollisionKernel> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidInput(format!("truncation level must be positive, got {m}")));
    }
    let out = CollisionKernel {
        cap: Some(kernel.cap.map_or(m, |c| c.min(m))),
        ..*kernel
    };
    out.validate()?;
    Ok(out)
}

/// `c = 2 C_B`, the damping constant of the monotone reformulation.
pub fn damping_constant(op: &CollisionOperator) -> f64 {
    2.0 * op.loss_bound_constant()
}

/// Advects along `x ↦ x - v dt` on the torus, axis by axis, with linear
/// interpolation between the two cells straddling each foot point.
pub fn transport_step(f: &Density, dt: f64) -> Density {
    let values = transport_values(f.grid(), f.values(), dt);
    Density::nonnegative(*f.grid(), values).expect("transport preserves nonnegativity")
}

pub(crate) fn transport_values(grid: &PhaseGrid, f: &[f64], dt: f64) -> Vec<f64> {
    if grid.is_homogeneous(f) {
        return f.to_vec();
    }
    let nvd = grid.n_vel();
    let nx = grid.nx;
    let ns = grid.n_space();
    let lat = grid.velocity();
    let mut cur = f.to_vec();
    for axis in 0..grid.d {
        let stride: usize = nx.pow(axis as u32);
        // per velocity node: integer shift and fraction
        let shifts: Vec<(i64, f64)> = (0..nvd)
            .map(|j| {
                let mut s = lat.node_coordinate(lat.axis_index(j, axis)) * dt / grid.dx();
                if (s - s.round()).abs() < ALIGN_TOL {
                    s = s.round();
                }
                let n = s.floor();
                (n as i64, s - n)
            })
            .collect();
        let src = &cur;
        let next: Vec<f64> = (0..ns)
            .into_par_iter()
            .flat_map_iter(|i| {
                let c = ((i / stride) % nx) as i64;
                let base = i - (c as usize) * stride;
                shifts.iter().enumerate().map(move |(j, &(n, a))| {
                    let at = |m: i64| base + (m.rem_euclid(nx as i64) as usize) * stride;
                    let near = src[at(c - n) * nvd + j];
                    if a == 0.0 {
                        near
                    } else {
                        near + a * (src[at(c - n - 1) * nvd + j] - near)
                    }
                })
            })
            .collect();
        cur = next;
    }
    cur
}

fn guard(op: &CollisionOperator, f: &[f64], dt: f64) -> Result<()> {
    let loss = op.max_loss_rate(f);
    if dt * loss > 1.0 {
        return Err(Error::PositivityGuard { dt, admissible: 1.0 / loss });
    }
    Ok(())
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yy, xx)| yy + a * xx).collect()
}

/// Largest fraction of the mass the quadrature backend may lose to negative
/// tail values in one collision step.
const TAIL_CLIP: f64 = 1e-6;

/// Builds the post-collision density. On the quadrature backend a post
/// velocity node loses `f'f'_*` interpolated from its neighbours, which is
/// not bounded by its own value, and multilinear interpolation overestimates
/// Gaussian tails; nearly empty tail nodes then dip below zero. Such dips are
/// zeroed and the density rescaled to its previous mass.
fn settle(op: &CollisionOperator, grid: PhaseGrid, mut values: Vec<f64>) -> Result<Density> {
    if op.backend() != Backend::Dvm {
        let negative: f64 = values.iter().filter(|x| **x < 0.0).map(|x| -x).sum();
        if negative > 0.0 {
            let before: f64 = values.iter().sum();
            if !(negative <= TAIL_CLIP * before) {
                return Err(Error::PositivityLoss { fraction: negative / before });
            }
            values.iter_mut().for_each(|x| *x = x.max(0.0));
            let scale = before / (before + negative);
            values.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Density::nonnegative(grid, values)
}

/// One collision substep. `Stepper::Strang` selects the second-order Heun
/// step. Also returns the density whose true flux represents the step.
pub fn collision_step(op: &CollisionOperator, f: &Density, dt: f64, stepper: Stepper, positivity_guard: bool) -> Result<(Density, Density)> {
    let grid = *f.grid();
    let g = f.values();
    let q = op.apply_q(f);
    match stepper {
        Stepper::Euler => {
            if positivity_guard {
                guard(op, g, dt)?;
            }
            Ok((settle(op, grid, axpy(dt, &q, g))?, f.clone()))
        }
        Stepper::Duhamel => {
            let mass = f.mass();
            let c = damping_constant(op);
            let c0 = c * mass;
            if c0 == 0.0 {
                return Ok((f.clone(), f.clone()));
            }
            let e = (-c0 * dt).exp();
            let w = -(-c0 * dt).exp_m1() / c0;
            let out: Vec<f64> = g.iter().zip(&q).map(|(x, qq)| e * x + w * (qq + c0 * x)).collect();
            Ok((settle(op, grid, out)?, f.clone()))
        }
        Stepper::Strang => {
            if positivity_guard {
                guard(op, g, dt)?;
            }
            let g1 = axpy(dt, &q, g);
            if positivity_guard {
                guard(op, &g1, dt)?;
            }
            let q1 = op.apply_q_values(&g1);
            let out: Vec<f64> = g.iter().zip(&g1).zip(&q1).map(|((a, b), c)| 0.5 * (a + b + dt * c)).collect();
            let mid: Vec<f64> = g.iter().zip(&g1).map(|(a, b)| 0.5 * (a + b)).collect();
            Ok((settle(op, grid, out)?, settle(op, grid, mid)?))
        }
    }
}

/// `T(dt/2) ∘ C(dt) ∘ T(dt/2)` with the Heun collision step.
pub fn strang_step(op: &CollisionOperator, f: &Density, dt: f64, positivity_guard: bool) -> Result<(Density, CollisionFlux)> {
    let half = transport_step(f, 0.5 * dt);
    let (c, mid) = collision_step(op, &half, dt, Stepper::Strang, positivity_guard)?;
    Ok((transport_step(&c, 0.5 * dt), op.true_flux(&mid)))
}

/// One full step of the configured scheme and the flux it realises.
pub fn step(op: &CollisionOperator, f: &Density, config: &SolverConfig) -> Result<(Density, CollisionFlux)> {
    match config.stepper {
        Stepper::Strang => strang_step(op, f, config.dt, config.positivity_guard),
        s => {
            let moved = transport_step(f, config.dt);
            let (out, rep) = collision_step(op, &moved, config.dt, s, config.positivity_guard)?;
            Ok((out, op.true_flux(&rep)))
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub entropy: f64,
    pub dissipation: f64,
    /// `𝓔_{2,2}`.
    pub e22: f64,
    /// `𝓔_{0,2+μ⁺}`.
    pub e0_moment: f64,
}

impl StepRecord {
    pub fn measure(op: &CollisionOperator, f: &Density, step: usize, time: f64) -> StepRecord {
        let m = moments(f, 2.0, 2.0);
        let q = 2.0 + op.kernel().mu.max(0.0);
        StepRecord {
            step,
            time,
            mass: m.mass,
            momentum: m.momentum,
            energy: m.kinetic_energy,
            entropy: m.entropy,
            dissipation: entropy_dissipation(op, f).value,
            e22: m.e_pq,
            e0_moment: moments(f, 0.0, q).e_pq,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepRecord>,
}

/// Integrates from `f0` to `t_end`, recording every step.
pub fn run(op: &CollisionOperator, f0: &Density, config: &SolverConfig) -> Result<RunOutput> {
    run_with(op, f0, config, |_, _| Ok(()))
}

/// [`run`] with a callback after every recorded step (streaming output,
/// checkpoints).
pub fn run_with<F>(op: &CollisionOperator, f0: &Density, config: &SolverConfig, mut on_step: F) -> Result<RunOutput>
where
    F: FnMut(&StepRecord, &Density) -> Result<()>,
{
    config.validate()?;
    if config.backend != op.backend() {
        return Err(Error::InvalidInput("solver backend differs from the operator backend".into()));
    }
    if f0.grid() != op.grid() {
        return Err(Error::InvalidInput("initial density lives on a different grid".into()));
    }
    let n = config.steps()?;
    let mut times = vec![0.0];
    let mut densities = vec![f0.clone()];
    let mut fluxes = Vec::new();
    let first = StepRecord::measure(op, f0, 0, 0.0);
    on_step(&first, f0)?;
    let mut diagnostics = vec![first];
    let mut f = f0.clone();
    for k in 0..n {
        let (next, flux) = step(op, &f, config).map_err(|e| match e {
            Error::NonFinite(_) => Error::NotFinite { step: k + 1 },
            other => other,
        })?;
        let time = (k + 1) as f64 * config.dt;
        let rec = StepRecord::measure(op, &next, k + 1, time);
        if !(rec.entropy.is_finite() && rec.dissipation.is_finite()) {
            return Err(Error::NotFinite { step: k + 1 });
        }
        on_step(&rec, &next)?;
        diagnostics.push(rec);
        if config.record_flux {
            fluxes.push(flux);
        }
        times.push(time);
        densities.push(next.clone());
        f = next;
    }
    let trajectory = Trajectory::new(times, densities, fluxes, TrajectorySource::Solver)?;
    Ok(RunOutput { trajectory, diagnostics })
}

/// Summary of one existence-iteration sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateSummary {
    pub iterate: usize,
    pub max_mass: f64,
    /// `min (f^{n+1} - f^n)` over all cells and times.
    pub min_increment: f64,
    /// `max_t ‖f^{n+1}_t - f^n_t‖₁`.
    pub l1_change: f64,
}

#[derive(Debug, Clone)]
pub struct ExistenceOutcome {
    pub times: Vec<f64>,
    /// Last iterate at every time level.
    pub limit: Vec<Density>,
    pub iterates: Vec<IterateSummary>,
    pub converged: bool,
}

/// Tolerance for the monotonicity and mass assertions of the iteration.
pub const ITERATION_TOL: f64 = 1e-12;

/// Monotone fixed-point iteration
/// `∂_t f^{n+1} + v·∇_x f^{n+1} + c₀ f^{n+1} = Q̄(f^n)`, `f¹ ≡ 0`, with
/// `Q̄(f) = Q(f) + c f ∫f`, discretised in Duhamel form along characteristics:
/// `f_{k+1} = T[e^{-c₀Δt} f_k + a Q̄(f^n_k)] + b Q̄(f^n_{k+1})`.
pub fn existence_iteration(
    op: &CollisionOperator,
    f0: &Density,
    config: &SolverConfig,
    n_max: usize,
    tol: f64,
) -> Result<ExistenceOutcome> {
    config.validate()?;
    if op.kernel().mu > 0.0 && op.kernel().cap.is_none() {
        return Err(Error::InvalidInput("the existence iteration needs a bounded kernel (mu <= 0 or a truncation level)".into()));
    }
    let grid = *f0.grid();
    let steps = config.steps()?;
    let dt = config.dt;
    let c = damping_constant(op);
    let mass0 = f0.mass();
    let c0 = c * mass0;
    let z = c0 * dt;
    let e = (-z).exp();
    let (a, b) = if z == 0.0 {
        (0.5 * dt, 0.5 * dt)
    } else {
        let a = (-(-z).exp_m1() - z * e) / (c0 * c0 * dt);
        (a, -(-z).exp_m1() / c0 - a)
    };
    let q_bar = |f: &[f64]| -> Vec<f64> {
        let m: f64 = f.iter().sum::<f64>() * grid.cell_volume();
        if m == 0.0 {
            return vec![0.0; f.len()];
        }
        let q = op.apply_q_values(f);
        q.iter().zip(f).map(|(qq, x)| qq + c * m * x).collect()
    };
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; steps + 1];
    let mut prev_bar: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; steps + 1];
    let mut iterates = Vec::new();
    let mut converged = false;
    for it in 1..=n_max {
        let mut next = Vec::with_capacity(steps + 1);
        next.push(f0.values().to_vec());
        for k in 0..steps {
            let inner: Vec<f64> = next[k].iter().zip(&prev_bar[k]).map(|(x, qb)| e * x + a * qb).collect();
            let moved = transport_values(&grid, &inner, dt);
            next.push(moved.iter().zip(&prev_bar[k + 1]).map(|(x, qb)| x + b * qb).collect());
        }
        let mut summary = IterateSummary {
            iterate: it + 1,
            max_mass: 0.0,
            min_increment: f64::INFINITY,
            l1_change: 0.0,
        };
        for (new, old) in next.iter().zip(&prev) {
            let mass = new.iter().sum::<f64>() * grid.cell_volume();
            summary.max_mass = summary.max_mass.max(mass);
            let inc = new.iter().zip(old).map(|(x, y)| x - y).fold(f64::INFINITY, f64::min);
            summary.min_increment = summary.min_increment.min(inc);
            summary.l1_change = summary.l1_change.max(grid.l1_distance(new, old));
            if new.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidDensity(format!("iterate {} left the nonnegative cone", it + 1)));
            }
        }
        if summary.min_increment < -ITERATION_TOL {
            return Err(Error::NonMonotoneIterate { iterate: it + 1, decrease: -summary.min_increment });
        }
        if summary.max_mass > mass0 + ITERATION_TOL {
            return Err(Error::MassGrowth { iterate: it + 1, mass: summary.max_mass, limit: mass0 });
        }
        let done = summary.l1_change < tol;
        iterates.push(summary);
        if done {
            prev = next;
            converged = true;
            break;
        }
        prev_bar = next.iter().map(|f| q_bar(f)).collect();
        prev = next;
    }
    let limit = prev
        .into_iter()
        .map(|v| Density::nonnegative(grid, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExistenceOutcome { times, limit, iterates, converged })
}

#[cfg(test)]
mod tests;
