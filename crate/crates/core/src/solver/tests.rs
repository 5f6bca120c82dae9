use super::*;
use crate::state::{entropy, maxwellian, two_bump};

fn grid(nx: usize, nv: usize, vmax: f64) -> PhaseGrid {
    PhaseGrid::new(2, 4.0, nx, vmax, nv).unwrap()
}

fn op_on(g: PhaseGrid, backend: Backend) -> CollisionOperator {
    CollisionOperator::new(g, CollisionKernel::default(), SpatialKernel::new(1.0, 1.0, 2).unwrap(), backend).unwrap()
}

fn config(dt: f64, t_end: f64, stepper: Stepper) -> SolverConfig {
    SolverConfig {
        dt,
        t_end,
        backend: Backend::Dvm,
        stepper,
        truncation: None,
        record_flux: true,
        positivity_guard: true,
    }
}

#[test]
fn aligned_transport_is_a_circular_shift() {
    let g = grid(8, 16, 6.0);
    let f = two_bump(&g, &[1.5, -1.0], 0.6, 0.5).unwrap();
    // every node velocity is an odd multiple of 3/8, so dt = 4/3 moves by odd cells
    let out = transport_step(&f, 4.0 / 3.0);
    let lat = g.velocity();
    for i in 0..g.n_space() {
        for j in 0..g.n_vel() {
            let v = lat.velocity(j);
            let src: Vec<i64> = (0..2)
                .map(|a| (g.space_axis_index(i, a) as i64 - (v[a] * (4.0 / 3.0) / g.dx()).round() as i64).rem_euclid(8))
                .collect();
            let k = (src[0] + 8 * src[1]) as usize;
            assert_eq!(out.values()[i * g.n_vel() + j].to_bits(), f.values()[k * g.n_vel() + j].to_bits());
        }
    }
    assert!((entropy(&out) - entropy(&f)).abs() < 1e-13);
}

#[test]
fn transport_keeps_uniform_data_and_mass() {
    let g = grid(8, 16, 6.0);
    let m = maxwellian(&g, &[0.2, 0.0], 0.8).unwrap();
    assert_eq!(transport_step(&m, 0.0371).values(), m.values());
    let f = two_bump(&g, &[1.5, -1.0], 0.6, 0.5).unwrap();
    let out = transport_step(&f, 0.0371);
    assert!((out.mass() - f.mass()).abs() < 1e-14);
    assert!(entropy(&out) <= entropy(&f) + 1e-14);
    assert!(out.values().iter().all(|&x| x >= 0.0));
}

#[test]
fn transport_converges_under_refinement() {
    // one full period of a single-velocity profile, sub-stepped
    let err = |nx: usize| {
        let g = PhaseGrid::new(2, 4.0, nx, 1.0, 2).unwrap();
        let vals: Vec<f64> = (0..g.len())
            .map(|idx| {
                let x = g.position(idx / 4);
                1.0 + 0.5 * (std::f64::consts::PI * x[0] / 2.0).sin() * (std::f64::consts::PI * x[1] / 2.0).cos()
            })
            .collect();
        let f = Density::normalized(g, vals).unwrap();
        // |v| = 0.5 for every node, so the period is 8; use a Courant number of 0.3 per step
        let steps = (8.0 / (0.3 * g.dx() / 0.5)).round() as usize;
        let dt = 8.0 / steps as f64;
        let mut cur = f.clone();
        for _ in 0..steps {
            cur = transport_step(&cur, dt);
        }
        g.l1_distance(cur.values(), f.values())
    };
    let (a, b) = (err(16), err(32));
    // first-order upwind interpolation
    assert!(a / b > 1.3 && b < 0.15, "{a} {b}");
}

#[test]
fn maxwellian_is_a_fixed_point_of_every_stepper() {
    let g = grid(4, 16, 6.0);
    let op = op_on(g, Backend::Dvm);
    let m = maxwellian(&g, &[0.3, -0.2], 0.7).unwrap();
    for s in [Stepper::Euler, Stepper::Duhamel, Stepper::Strang] {
        let (out, _) = step(&op, &m, &config(0.01, 0.01, s)).unwrap();
        let diff = out.values().iter().zip(m.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{s:?}: {diff}");
    }
}

#[test]
fn euler_and_duhamel_agree_to_second_order() {
    let g = grid(2, 6, 3.0);
    let op = op_on(g, Backend::Dvm);
    let f = two_bump(&g, &[1.0, 0.0], 0.4, 0.0);
    let f = match f {
        Ok(f) => f,
        Err(_) => {
            let row: Vec<f64> = (0..g.n_vel()).map(|j| 1.0 + (j % 5) as f64).collect();
            Density::normalized(g, g.broadcast_row(&row)).unwrap()
        }
    };
    let diff = |dt: f64| {
        let (a, _) = collision_step(&op, &f, dt, Stepper::Euler, true).unwrap();
        let (b, _) = collision_step(&op, &f, dt, Stepper::Duhamel, true).unwrap();
        g.l1_distance(a.values(), b.values())
    };
    let (a, b) = (diff(0.004), diff(0.002));
    assert!((a / b - 4.0).abs() < 0.2, "{a} {b}");
}

#[test]
fn guard_reports_the_admissible_step() {
    let g = grid(2, 6, 3.0);
    let op = op_on(g, Backend::Dvm);
    let row: Vec<f64> = (0..g.n_vel()).map(|j| 1.0 + (j % 5) as f64).collect();
    let f = Density::normalized(g, g.broadcast_row(&row)).unwrap();
    match collision_step(&op, &f, 1e3, Stepper::Euler, true) {
        Err(Error::PositivityGuard { dt, admissible }) => assert!(dt == 1e3 && admissible < 1e3),
        other => panic!("expected guard error, got {other:?}"),
    }
    let admissible = 1.0 / op.max_loss_rate(f.values());
    let (out, _) = collision_step(&op, &f, 0.999 * admissible, Stepper::Euler, true).unwrap();
    assert!(out.values().iter().all(|&x| x >= 0.0));
    // the damped step needs no guard
    let (out, _) = collision_step(&op, &f, 1e3, Stepper::Duhamel, true).unwrap();
    assert!(out.values().iter().all(|&x| x >= 0.0));
    assert!((out.mass() - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_strang_matches_pure_collision() {
    let g = grid(4, 6, 3.0);
    let op = op_on(g, Backend::Dvm);
    let row: Vec<f64> = (0..g.n_vel()).map(|j| 1.0 + (j % 3) as f64).collect();
    let f = Density::normalized(g, g.broadcast_row(&row)).unwrap();
    let (a, _) = strang_step(&op, &f, 0.01, true).unwrap();
    let (b, _) = collision_step(&op, &f, 0.01, Stepper::Strang, true).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn run_conserves_and_dissipates() {
    let g = grid(4, 8, 5.0);
    let op = op_on(g, Backend::Dvm);
    let f0 = two_bump(&g, &[1.2, 0.0], 0.3, 0.4).unwrap();
    let out = run(&op, &f0, &config(0.01, 0.2, Stepper::Strang)).unwrap();
    let d = &out.diagnostics;
    assert_eq!(d.len(), 21);
    assert_eq!(out.trajectory.fluxes().len(), 20);
    for r in d {
        assert!((r.mass - d[0].mass).abs() <= 1e-12);
        assert!((r.energy - d[0].energy).abs() <= 1e-10 * d[0].energy);
        assert!((r.momentum[0] - d[0].momentum[0]).abs() <= 1e-10);
    }
    assert!(d.windows(2).all(|w| w[1].entropy <= w[0].entropy + 1e-10));
    assert!(d.last().unwrap().entropy < d[0].entropy);
}

#[test]
fn quadrature_runs_zero_negligible_tail_dips() {
    let g = grid(2, 16, 6.0);
    let quad = Backend::Quadrature { n_omega: 16 };
    let op = op_on(g, quad);
    let f0 = two_bump(&g, &[1.5, 0.0], 0.6, 0.0).unwrap();
    for stepper in [Stepper::Euler, Stepper::Duhamel, Stepper::Strang] {
        let mut c = config(0.01, 0.1, stepper);
        c.backend = quad;
        let out = run(&op, &f0, &c).unwrap();
        let d = &out.diagnostics;
        assert!(d.iter().all(|r| (r.mass - 1.0).abs() <= 1e-9), "{stepper:?}");
        assert!(d.windows(2).all(|w| w[1].entropy <= w[0].entropy + 1e-10));
    }
    // small dips are removed at fixed mass
    let mut v = vec![1.0; g.len()];
    v[3] = -1e-9;
    let s = settle(&op, g, v.clone()).unwrap();
    assert_eq!(s.values()[3], 0.0);
    assert!((s.values().iter().sum::<f64>() - v.iter().sum::<f64>()).abs() <= 1e-12 * g.len() as f64);
    // a dip carrying real mass is an error
    v[3] = -1.0;
    assert!(matches!(settle(&op, g, v), Err(Error::PositivityLoss { .. })));
    let mut v = vec![1.0; g.len()];
    v[3] = -1e-3;
    assert!(settle(&op_on(g, Backend::Dvm), g, v).is_err());
}

#[test]
fn quadrature_energy_drift_decays_with_the_lattice() {
    let quad = Backend::Quadrature { n_omega: 16 };
    let drift = |nv: usize| {
        let g = grid(2, nv, 6.0);
        let mut c = config(0.02, 0.4, Stepper::Strang);
        c.backend = quad;
        c.record_flux = false;
        let f0 = two_bump(&g, &[1.5, 0.0], 0.6, 0.0).unwrap();
        let d = run(&op_on(g, quad), &f0, &c).unwrap().diagnostics;
        (d.last().unwrap().energy - d[0].energy).abs() / d[0].energy
    };
    let (a, b) = (drift(16), drift(24));
    // second order in the spacing would give (24/16)^2 = 2.25
    assert!(a / b >= 2.25, "{a} -> {b}");
}

#[test]
fn run_rejects_misaligned_end_time() {
    let g = grid(2, 6, 3.0);
    let op = op_on(g, Backend::Dvm);
    let f0 = Density::uniform(g);
    assert!(run(&op, &f0, &config(0.03, 0.1, Stepper::Strang)).is_err());
    let mut c = config(0.01, 0.02, Stepper::Strang);
    c.backend = Backend::Quadrature { n_omega: 8 };
    assert!(run(&op, &f0, &c).is_err());
}

#[test]
fn truncation_caps_weights_monotonically() {
    let g = grid(2, 6, 3.0);
    let k = CollisionKernel::new(0.5, 1.0, crate::kernels::AngularProfile::Uniform).unwrap();
    let sp = SpatialKernel::new(1.0, 1.0, 2).unwrap();
    let full = CollisionOperator::new(g, k, sp, Backend::Dvm).unwrap();
    let sup = k.sup_on_box(2.0 * 3.0 * 2f64.sqrt());
    let same = CollisionOperator::new(g, truncate_kernel(&k, sup * 1.01).unwrap(), sp, Backend::Dvm).unwrap();
    let half = CollisionOperator::new(g, truncate_kernel(&k, 0.5 * sup).unwrap(), sp, Backend::Dvm).unwrap();
    let lower = CollisionOperator::new(g, truncate_kernel(&k, 0.3 * sup).unwrap(), sp, Backend::Dvm).unwrap();
    let (tf, ts, th, tl) = (full.dvm_table().unwrap(), same.dvm_table().unwrap(), half.dvm_table().unwrap(), lower.dvm_table().unwrap());
    assert_eq!(tf.weights, ts.weights);
    let scale = tf.lambda * crate::geometry::sphere_area(2).unwrap();
    let mut capped = 0;
    for r in 0..tf.len() {
        assert!(tl.weights[r] <= th.weights[r] && th.weights[r] <= tf.weights[r]);
        // the class factor 1/(m-1) is shared, so capped weights are scale·m/(m-1)
        if th.weights[r] < tf.weights[r] {
            capped += 1;
            assert!(th.weights[r] <= scale * 0.5 * sup + 1e-12);
        }
    }
    assert!(capped > 0);
    assert!(truncate_kernel(&k, 0.0).is_err());
}

#[test]
fn existence_iteration_is_monotone_and_bounded() {
    let g = grid(2, 6, 3.0);
    let op = op_on(g, Backend::Dvm);
    let row: Vec<f64> = (0..g.n_vel()).map(|j| 1.0 + (j % 5) as f64).collect();
    let f0 = Density::normalized(g, g.broadcast_row(&row)).unwrap();
    let cfg = config(0.01, 0.1, Stepper::Duhamel);
    let out = existence_iteration(&op, &f0, &cfg, 60, 1e-12).unwrap();
    assert!(out.converged);
    assert!(out.iterates.iter().all(|s| s.min_increment >= -ITERATION_TOL && s.max_mass <= 1.0 + ITERATION_TOL));
    // the first nontrivial iterate is the damped, advected initial datum
    let one = existence_iteration(&op, &f0, &cfg, 1, 0.0).unwrap();
    let c0 = damping_constant(&op) * f0.mass();
    for (t, f) in one.times.iter().zip(&one.limit) {
        let e = (-c0 * t).exp();
        assert!(f.values().iter().zip(f0.values()).all(|(a, b)| (a - e * b).abs() <= 1e-14 * b));
    }
    // limit close to a Strang run
    let strang = run(&op, &f0, &config(0.01, 0.1, Stepper::Strang)).unwrap();
    let last = strang.trajectory.densities().last().unwrap();
    assert!(g.l1_distance(last.values(), out.limit.last().unwrap().values()) < 1e-3);
}

#[test]
fn existence_iteration_needs_bounded_kernel() {
    let g = grid(2, 6, 3.0);
    let k = CollisionKernel::new(0.5, 1.0, crate::kernels::AngularProfile::Uniform).unwrap();
    let op = CollisionOperator::new(g, k, SpatialKernel::new(1.0, 1.0, 2).unwrap(), Backend::Dvm).unwrap();
    assert!(existence_iteration(&op, &Density::uniform(g), &config(0.01, 0.02, Stepper::Duhamel), 5, 1e-10).is_err());
}
