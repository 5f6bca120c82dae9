//! Acceptance criteria AC-1..AC-11 at desk scale, plus the pieces the
//! scenarios reuse.

use fbe_core::collision::CollisionFlux;
use fbe_core::dissipation::{d_psi_star, entropy_dissipation, DissipationStructure};
use fbe_core::generic::{apply_l, apply_m, d_energy, d_entropy};
use fbe_core::kernels::{check_mollifier_domination, AngularProfile, CollisionKernel, SampleGrid, SpatialKernel};
use fbe_core::solver::{existence_iteration, run, step, SolverConfig, Stepper};
use fbe_core::state::{fit_maxwellian, moments, relative_entropy, two_bump};
use fbe_core::variational::{entropy_identity_defect, l_functional, tcre_residual, standard_test_functions, Trajectory};
use fbe_core::{Backend, CollisionOperator, Density, PhaseGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Refinement ratio demanded wherever a second-order rate is checked.
pub const ORDER_RATIO: f64 = 3.5;
/// Residuals below this are roundoff and exempt from rate checks.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "AC-{:<2} {} {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }

    /// Process exit code reported when this criterion fails.
    pub fn exit_code(&self) -> i32 {
        exit_code(self.id)
    }
}

pub fn exit_code(id: usize) -> i32 {
    10 + id as i32
}

pub const TITLES: [&str; 11] = [
    "conservation",
    "H-theorem",
    "entropy identity",
    "variational characterisation",
    "structure identities",
    "GENERIC degeneracies",
    "relaxation to equilibrium",
    "adjointness",
    "mollifier domination",
    "existence iteration",
    "TCRE residual",
];

fn outcome(id: usize, passed: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title: TITLES[id - 1],
        passed,
        detail,
    }
}

/// Desk-scale phase grid.
pub fn desk_grid() -> PhaseGrid {
    PhaseGrid::new(2, 4.0, 8, 6.0, 16).expect("desk grid")
}

pub fn desk_spatial() -> SpatialKernel {
    SpatialKernel {
        gamma: 1.0,
        c: 1.0,
        images: 2,
    }
}

pub fn operator(grid: PhaseGrid, backend: Backend) -> fbe_core::Result<CollisionOperator> {
    CollisionOperator::new(grid, CollisionKernel::default(), desk_spatial(), backend)
}

pub fn solver_config(dt: f64, t_end: f64, backend: Backend, record_flux: bool) -> SolverConfig {
    SolverConfig {
        dt,
        t_end,
        backend,
        stepper: Stepper::Strang,
        truncation: None,
        record_flux,
        positivity_guard: true,
    }
}

/// I.i.d. cell values in `[0.2, 1.8]`, unit mass.
pub fn random_density(grid: PhaseGrid, rng: &mut ChaCha8Rng) -> fbe_core::Result<Density> {
    let values = (0..grid.len()).map(|_| rng.gen_range(0.2..1.8)).collect();
    Density::normalized(grid, values)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Conserved quantities and entropy of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub entropy: f64,
}

impl Sample {
    pub fn of(f: &Density) -> Sample {
        let m = moments(f, 2.0, 2.0);
        Sample {
            mass: m.mass,
            momentum: m.momentum,
            energy: m.kinetic_energy,
            entropy: m.entropy,
        }
    }
}

/// Worst relative drifts `(mass, momentum, energy)`. Momentum is measured
/// against `max(|p_0|, √(2 m_0 E_0))` because symmetric data carry none.
pub fn drifts(samples: &[Sample]) -> (f64, f64, f64) {
    let s0 = &samples[0];
    let p_scale = s0
        .momentum
        .iter()
        .map(|p| p * p)
        .sum::<f64>()
        .sqrt()
        .max((2.0 * s0.mass * s0.energy).sqrt());
    let mut out = (0.0f64, 0.0f64, 0.0f64);
    for s in samples {
        out.0 = out.0.max((s.mass - s0.mass).abs() / s0.mass);
        let dp = s.momentum.iter().zip(&s0.momentum).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        out.1 = out.1.max(dp / p_scale);
        out.2 = out.2.max((s.energy - s0.energy).abs() / s0.energy);
    }
    out
}

pub fn conservation_outcome(samples: &[Sample]) -> Outcome {
    let (m, p, e) = drifts(samples);
    outcome(
        1,
        m <= 1e-12 && p <= 1e-10 && e <= 1e-10,
        format!("{} steps, drift mass {m:.2e} (<=1e-12), momentum {p:.2e} (<=1e-10), energy {e:.2e} (<=1e-10)", samples.len() - 1),
    )
}

/// Largest step-to-step entropy increase.
pub fn max_entropy_increase(samples: &[Sample]) -> f64 {
    samples.windows(2).map(|w| w[1].entropy - w[0].entropy).fold(f64::NEG_INFINITY, f64::max)
}

pub fn h_theorem_outcome(samples: &[Sample]) -> Outcome {
    let inc = max_entropy_increase(samples);
    let dh = samples.last().unwrap().entropy - samples[0].entropy;
    outcome(2, inc <= 1e-10, format!("max H(f_n+1) - H(f_n) = {inc:.2e} (<=1e-10), total change {dh:.4e}"))
}

/// AC-1 and AC-2: 1000 Strang/DVM steps from spatially modulated two-bump data.
pub fn ac1_ac2() -> anyhow::Result<(Outcome, Outcome)> {
    let grid = desk_grid();
    let op = operator(grid, Backend::Dvm)?;
    let f0 = two_bump(&grid, &[1.5, 0.0], 0.6, 0.3)?;
    let cfg = solver_config(0.01, 0.01, Backend::Dvm, false);
    let mut samples = vec![Sample::of(&f0)];
    let mut f = f0;
    for _ in 0..1000 {
        f = step(&op, &f, &cfg)?.0;
        samples.push(Sample::of(&f));
    }
    Ok((conservation_outcome(&samples), h_theorem_outcome(&samples)))
}

/// Spatially uniform two-bump data on the desk grid.
pub fn uniform_two_bump(grid: &PhaseGrid) -> fbe_core::Result<Density> {
    two_bump(grid, &[1.5, 0.0], 0.6, 0.0)
}

fn desk_runs(dts: &[f64], t_end: f64) -> anyhow::Result<(CollisionOperator, Vec<Trajectory>)> {
    let grid = desk_grid();
    let op = operator(grid, Backend::Dvm)?;
    let f0 = uniform_two_bump(&grid)?;
    let mut out = Vec::new();
    for &dt in dts {
        out.push(run(&op, &f0, &solver_config(dt, t_end, Backend::Dvm, true))?.trajectory);
    }
    Ok((op, out))
}

/// AC-3 on uniform data (transport is the identity there, so the identity
/// isolates the collision step).
pub fn ac3() -> anyhow::Result<Outcome> {
    let (op, runs) = desk_runs(&[0.01, 0.005], 0.5)?;
    let a = entropy_identity_defect(&op, &runs[0])?;
    let b = entropy_identity_defect(&op, &runs[1])?;
    let frac = a.max_defect / a.delta_h.abs();
    let ratio = a.max_defect / b.max_defect;
    Ok(outcome(
        3,
        frac <= 0.01 && ratio >= ORDER_RATIO,
        format!(
            "defect {:.2e} = {:.2e}·|ΔH| (<=1%), ratio under dt halving {ratio:.2} (>={ORDER_RATIO})",
            a.max_defect, frac
        ),
    ))
}

/// `L_T` of the true flux and of the flux scaled by `factor`.
pub fn l_gap(op: &CollisionOperator, traj: &Trajectory, structure: DissipationStructure, factor: f64) -> fbe_core::Result<(f64, f64)> {
    let base = l_functional(op, traj, structure)?;
    let scaled = l_functional(op, &traj.with_scaled_flux(factor), structure)?;
    Ok((base.l_t, scaled.l_t))
}

pub fn ac4() -> anyhow::Result<Outcome> {
    let (op, runs) = desk_runs(&[0.01, 0.005], 0.5)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for s in [DissipationStructure::Quadratic, DissipationStructure::Cosh] {
        let (l, l11) = l_gap(&op, &runs[0], s, 1.1)?;
        let (l_half, _) = l_gap(&op, &runs[1], s, 1.1)?;
        let ratio = l.abs() / l_half.abs();
        passed &= l.abs() <= 1e-3 && ratio >= ORDER_RATIO && l11 >= 10.0 * l.abs();
        parts.push(format!("{}: L_T {l:.2e} (<=1e-3), halving ratio {ratio:.2}, L_T(1.1U) {l11:.2e}", s.name()));
    }
    Ok(outcome(4, passed, parts.join("; ")))
}

/// `|D_Ψ*^quad - ½D| / D`.
pub fn quadratic_half_defect(op: &CollisionOperator, f: &Density) -> f64 {
    let d = entropy_dissipation(op, f).value;
    let dps = d_psi_star(op, f, DissipationStructure::Quadratic).value;
    rel(dps, 0.5 * d)
}

/// Worst compatibility and cosh-formula defects on a log-spaced 50×50 grid
/// in `[1e-3, 1e3]²`, relative to `max(s, t)`.
pub fn pointwise_identities() -> fbe_core::Result<(f64, f64)> {
    let pts: Vec<f64> = (0..50).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 49.0)).collect();
    let mut compat = 0.0f64;
    let mut cosh = 0.0f64;
    for &s in &pts {
        for &t in &pts {
            let scale = s.max(t);
            for st in [DissipationStructure::Quadratic, DissipationStructure::Cosh] {
                let lhs = st.psi_star_prime(s.ln() - t.ln()) * st.theta(s, t)?;
                compat = compat.max((lhs - (s - t)).abs() / scale);
            }
            let g = DissipationStructure::Cosh.g_psi_star(s, t)?;
            let want = 0.5 * (s.sqrt() - t.sqrt()).powi(2);
            cosh = cosh.max((g - want).abs() / scale);
        }
    }
    Ok((compat, cosh))
}

/// AC-5: twenty random densities on the nx = 4 grid, one on the desk grid.
pub fn ac5(seed: u64) -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = operator(PhaseGrid::new(2, 4.0, 4, 6.0, 16)?, Backend::Dvm)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let f = random_density(*small.grid(), &mut rng)?;
        worst = worst.max(quadratic_half_defect(&small, &f));
    }
    let desk = operator(desk_grid(), Backend::Dvm)?;
    let f = random_density(desk_grid(), &mut rng)?;
    worst = worst.max(quadratic_half_defect(&desk, &f));
    let (compat, cosh) = pointwise_identities()?;
    Ok(outcome(
        5,
        worst <= 1e-12 && compat <= 1e-12 && cosh <= 1e-12,
        format!("|D_Ψ*^quad - D/2|/D {worst:.2e}, cosh G_Ψ* {cosh:.2e}, compatibility {compat:.2e} (all <=1e-12)"),
    ))
}

/// `(‖M dE‖_∞, |⟨dS, M dS⟩ - D| / D)`.
pub fn onsager_defects(op: &CollisionOperator, f: &Density, with_entropy: bool) -> fbe_core::Result<(f64, Option<f64>)> {
    let grid = f.grid();
    let m_de = max_abs(&apply_m(op, f, &d_energy(grid))?);
    if !with_entropy {
        return Ok((m_de, None));
    }
    let ds = d_entropy(f)?;
    let m_ds = apply_m(op, f, &ds)?;
    let d = entropy_dissipation(op, f).value;
    Ok((m_de, Some(rel(grid.inner(&ds, &m_ds), d))))
}

/// `‖L dS‖_∞` for smooth two-bump data at velocity resolution `nv`.
pub fn l_ds_norm(base: &PhaseGrid, nv: usize) -> fbe_core::Result<f64> {
    let grid = PhaseGrid::new(base.d, base.torus_side, base.nx, base.vmax, nv)?;
    let f = two_bump(&grid, &[1.0, -0.5], 0.6, 0.3)?;
    Ok(max_abs(&apply_l(&f, &d_entropy(&f)?)?))
}

/// AC-6: `M dE` on the desk grid, `⟨dS, M dS⟩ = D` on the nx = 4 grid,
/// `L dS` under velocity refinement.
pub fn ac6(seed: u64) -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let desk = operator(desk_grid(), Backend::Dvm)?;
    let small = operator(PhaseGrid::new(2, 4.0, 4, 6.0, 16)?, Backend::Dvm)?;
    let (mut m_de, mut pairing) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let f = random_density(desk_grid(), &mut rng)?;
        m_de = m_de.max(onsager_defects(&desk, &f, false)?.0);
        let f = random_density(*small.grid(), &mut rng)?;
        let (a, b) = onsager_defects(&small, &f, true)?;
        m_de = m_de.max(a);
        pairing = pairing.max(b.unwrap_or(0.0));
    }
    let (coarse, fine) = (l_ds_norm(&desk_grid(), 16)?, l_ds_norm(&desk_grid(), 32)?);
    let ratio = coarse / fine;
    Ok(outcome(
        6,
        m_de <= 1e-12 && pairing <= 1e-10 && ratio >= ORDER_RATIO,
        format!(
            "‖M dE‖ {m_de:.2e} (<=1e-12), ⟨dS,M dS⟩ vs D {pairing:.2e} (<=1e-10), ‖L dS‖ {coarse:.2e} -> {fine:.2e} ratio {ratio:.2} (>={ORDER_RATIO})"
        ),
    ))
}

/// AC-7: uniform run until `T = 15`.
pub fn ac7() -> anyhow::Result<Outcome> {
    let grid = desk_grid();
    let op = operator(grid, Backend::Dvm)?;
    let f0 = uniform_two_bump(&grid)?;
    let m = fit_maxwellian(&f0)?;
    let cfg = solver_config(0.05, 0.05, Backend::Dvm, false);
    let mut f = f0;
    let mut prev = relative_entropy(&f, &m)?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..300 {
        f = step(&op, &f, &cfg)?.0;
        let h = relative_entropy(&f, &m)?;
        worst = worst.max(h - prev);
        prev = h;
    }
    let dist = grid.l1_distance(f.values(), m.values());
    Ok(outcome(
        7,
        dist <= 1e-3 && worst <= 1e-10,
        format!("‖f_T - M‖₁ {dist:.2e} at T=15 (<=1e-3), max increase of H(f|M) {worst:.2e} (<=1e-10)"),
    ))
}

/// Worst `|⟨φ, div U⟩ - ¼⟨∇̄φ, U⟩|` relative to `¼Σ|∇̄φ U w|`.
pub fn adjointness_defect(op: &CollisionOperator, pairs: usize, rng: &mut ChaCha8Rng) -> fbe_core::Result<f64> {
    let grid = *op.grid();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let phi: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = CollisionFlux::Dense((0..op.tuple_count()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let lhs = grid.inner(&phi, &op.divergence(&u)?);
        let rhs = op.pairing_sweep(&phi, &u)?;
        worst = worst.max((lhs - rhs).abs() / op.pairing_magnitude(&phi, &u));
    }
    Ok(worst)
}

/// AC-8 on the nx = 4, nv = 8 grid: dense fluxes at desk scale do not fit in memory.
pub fn ac8(seed: u64) -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let grid = PhaseGrid::new(2, 4.0, 4, 4.0, 8)?;
    let mut parts = Vec::new();
    let mut passed = true;
    for backend in [Backend::Dvm, Backend::Quadrature { n_omega: 16 }] {
        let op = operator(grid, backend)?;
        let d = adjointness_defect(&op, 100, &mut rng)?;
        passed &= d <= 1e-12;
        parts.push(format!("{} {d:.2e}", backend_name(backend)));
    }
    Ok(outcome(8, passed, format!("100 pairs, worst relative defect {} (<=1e-12)", parts.join(", "))))
}

pub fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Dvm => "dvm",
        Backend::Quadrature { .. } => "quadrature",
    }
}

/// AC-9 for hard (`μ = ½`) and soft (`μ = -½`) potentials with the uniform
/// angular profile. Anisotropic profiles jump at `v = 0`, where tensor
/// Gauss–Hermite sums stop converging, so they are not part of the check.
pub fn ac9() -> anyhow::Result<Outcome> {
    let spatial = SpatialKernel::default();
    let sample = SampleGrid {
        dimension: 2,
        halfwidth: 6.0,
        points_per_axis: 25,
        quadrature_nodes: 24,
    };
    let mut c = 0.0f64;
    let mut change = 0.0f64;
    for mu in [0.5, -0.5] {
        let kernel = CollisionKernel::new(mu, 1.0, AngularProfile::Uniform)?;
        for beta in [0.1, 0.5, 0.9] {
            let r = check_mollifier_domination(&kernel, &spatial, beta, &sample, f64::INFINITY)?;
            c = c.max(r.max_ratio);
            change = change.max(r.refinement_change);
        }
    }
    Ok(outcome(
        9,
        c.is_finite() && change <= 0.01,
        format!("μ = ±0.5, single bound C = {c:.4}, worst change under quadrature doubling {change:.2e} (<=1%)"),
    ))
}

/// Two unit-temperature bumps at `v₁ = ±1` with a cosine modulation in `x₁`;
/// no truncation check, so any box works.
pub fn smooth_bumps(grid: &PhaseGrid) -> fbe_core::Result<Density> {
    let lat = grid.velocity();
    let nvd = grid.n_vel();
    let vals = (0..grid.len())
        .map(|idx| {
            let v = lat.velocity(idx % nvd);
            let x = grid.position(idx / nvd);
            let bump = |c: f64| (-(v[0] - c).powi(2) - v[1] * v[1]).exp();
            (bump(1.0) + bump(-1.0)) * (1.0 + 0.3 * (std::f64::consts::PI * x[0] / 2.0).cos())
        })
        .collect();
    Density::normalized(*grid, vals)
}

pub fn ac10() -> anyhow::Result<Outcome> {
    let grid = PhaseGrid::new(2, 4.0, 4, 4.0, 8)?;
    let op = operator(grid, Backend::Dvm)?;
    let f0 = smooth_bumps(&grid)?;
    let dt = 0.0025;
    let mut cfg = solver_config(dt, 0.2, Backend::Dvm, false);
    cfg.stepper = Stepper::Duhamel;
    let ex = existence_iteration(&op, &f0, &cfg, 200, 1e-13)?;
    let strang = run(&op, &f0, &solver_config(dt, 0.2, Backend::Dvm, false))?;
    let last = strang.trajectory.densities().last().expect("nonempty run");
    let dist = grid.l1_distance(last.values(), ex.limit.last().expect("nonempty limit").values());
    let min_inc = ex.iterates.iter().map(|s| s.min_increment).fold(f64::INFINITY, f64::min);
    let max_mass = ex.iterates.iter().map(|s| s.max_mass).fold(0.0, f64::max);
    Ok(outcome(
        10,
        ex.converged && min_inc >= -1e-12 && max_mass <= 1.0 + 1e-12 && dist <= 1e-4,
        format!(
            "{} iterates (converged {}), min increment {min_inc:.2e}, max mass {max_mass:.15}, L¹ to Strang {dist:.2e} (<=1e-4)",
            ex.iterates.len(),
            ex.converged
        ),
    ))
}

/// AC-11 on modulated desk data. The three test functions are collision
/// invariants, so their residuals can sit at roundoff; a rate is demanded
/// only above [`ROUNDOFF_FLOOR`].
pub fn ac11() -> anyhow::Result<Outcome> {
    let grid = desk_grid();
    let op = operator(grid, Backend::Dvm)?;
    let f0 = two_bump(&grid, &[1.5, 0.0], 0.6, 0.3)?;
    let phis = standard_test_functions(&grid);
    let mut res = Vec::new();
    for dt in [0.02, 0.01] {
        let traj = run(&op, &f0, &solver_config(dt, 0.1, Backend::Dvm, true))?.trajectory;
        res.push(tcre_residual(&op, &traj, &phis)?.per_function);
    }
    let mut passed = res[0][0] <= 1e-12;
    for k in 1..phis.len() {
        let (a, b) = (res[0][k], res[1][k]);
        passed &= (a <= ROUNDOFF_FLOOR && b <= ROUNDOFF_FLOOR) || a / b >= ORDER_RATIO;
    }
    Ok(outcome(
        11,
        passed,
        format!(
            "residual φ=1 {:.2e} (<=1e-12); φ=v₁ {:.2e} -> {:.2e}; φ=|v|² {:.2e} -> {:.2e} (ratio >={ORDER_RATIO} or <= {ROUNDOFF_FLOOR:e})",
            res[0][0], res[0][1], res[1][1], res[0][2], res[1][2]
        ),
    ))
}

/// Runs every criterion in order, handing each outcome to `report` as soon
/// as it is known. A criterion that errors is reported as failed.
pub fn run_all(seed: u64, mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let fail = |id: usize, msg: &str| outcome(id, false, format!("error: {msg}"));
    let mut out = Vec::with_capacity(11);
    match ac1_ac2() {
        Ok((a, b)) => out.extend([a, b]),
        Err(e) => {
            let msg = format!("{e:#}");
            out.extend([fail(1, &msg), fail(2, &msg)]);
        }
    }
    report(&out[0]);
    report(&out[1]);
    let rest: [(usize, Box<dyn Fn() -> anyhow::Result<Outcome>>); 9] = [
        (3, Box::new(ac3)),
        (4, Box::new(ac4)),
        (5, Box::new(move || ac5(seed))),
        (6, Box::new(move || ac6(seed))),
        (7, Box::new(ac7)),
        (8, Box::new(move || ac8(seed))),
        (9, Box::new(ac9)),
        (10, Box::new(ac10)),
        (11, Box::new(ac11)),
    ];
    for (id, f) in rest.iter() {
        let o = f().unwrap_or_else(|e| fail(*id, &format!("{e:#}")));
        report(&o);
        out.push(o);
    }
    out
}
