use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "state.nx=4",
    "state.nv=8",
    "state.vmax=5.0",
    "state.initial={kind=\"two_bump\", centre=[0.8, 0.0], temperature=0.3, spatial_amplitude=0.2}",
    "solver.dt=0.01",
    "solver.t_end=0.05",
];

fn fbe(args: &[&str], overrides: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fbe"));
    cmd.args(args);
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().expect("binary runs")
}

fn small(verb: &str, out: &Path, extra: &[&str]) -> Output {
    let mut o: Vec<&str> = SMALL.to_vec();
    o.extend_from_slice(extra);
    fbe(&[verb, "--out", out.to_str().unwrap(), "--workers", "1"], &o)
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn relax_writes_monotone_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = small("run", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = lines(&dir.path().join("diagnostics.ndjson"));
    assert_eq!(recs.len(), 6);
    let h: Vec<f64> = recs.iter().map(|r| r["entropy"].as_f64().unwrap()).collect();
    assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{h:?}");
    assert!(recs[0]["d_psi_star"].as_f64().is_some());
    assert!(dir.path().join("config.toml").exists());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn identical_config_gives_identical_stream() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small("run", a.path(), &["solver.record_flux=true"]).status.success());
    assert!(small("run", b.path(), &["solver.record_flux=true"]).status.success());
    let sa = std::fs::read(a.path().join("diagnostics.ndjson")).unwrap();
    assert_eq!(sa, std::fs::read(b.path().join("diagnostics.ndjson")).unwrap());
    // the dumped config reruns to the same stream
    let c = tempfile::tempdir().unwrap();
    let cfg = a.path().join("config.toml");
    let out = fbe(&["run", "--config", cfg.to_str().unwrap(), "--out", c.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(sa, std::fs::read(c.path().join("diagnostics.ndjson")).unwrap());
}

#[test]
fn maxwellian_start_gives_constant_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = small("run", dir.path(), &["state.initial={kind=\"maxwellian\", mean_velocity=[0.2, 0.0], temperature=0.4}"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = lines(&dir.path().join("diagnostics.ndjson"));
    for key in ["mass", "energy", "entropy", "e22"] {
        let v0 = recs[0][key].as_f64().unwrap();
        for r in &recs {
            assert!((r[key].as_f64().unwrap() - v0).abs() <= 1e-12 * v0.abs().max(1.0), "{key}");
        }
    }
}

#[test]
fn oversized_euler_step_reports_admissible_dt() {
    let dir = tempfile::tempdir().unwrap();
    let out = small("run", dir.path(), &["solver.stepper=\"euler\"", "solver.dt=50.0", "solver.t_end=50.0"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("admissible"), "{err}");
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(small("run", dir.path(), &["solver.bogus=1"]).status.code(), Some(2));
    assert_eq!(small("run", dir.path(), &["solver.t_end=0.055"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[state]\nnx = 4\nunknown = true\n").unwrap();
    let out = fbe(&["run", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let missing = fbe(&["run", "--config", "/nonexistent/fbe.toml"], &[]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn audit_reports_positivity_gap() {
    let dir = tempfile::tempdir().unwrap();
    // uniform data: the discrete transport is then exact and the audit sees only collisions
    let out = small(
        "audit",
        dir.path(),
        &["state.initial={kind=\"two_bump\", centre=[0.8, 0.0], temperature=0.3}", "solver.t_end=0.3"],
    );
    assert_eq!(out.status.code(), Some(0), "{}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    let audit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap()).unwrap();
    let rows = audit.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let (quad, cosh) = (&rows[0], &rows[1]);
    assert_eq!(quad["structure"], "quadratic");
    assert_eq!(cosh["structure"], "cosh");
    assert_ne!(quad["report"]["l"]["integral_r"], cosh["report"]["l"]["integral_r"]);
    for row in rows {
        let l_true = row["report"]["l"]["l_t"].as_f64().unwrap();
        assert!(l_true.abs() <= 1e-3);
        for f in row["factors"].as_array().unwrap() {
            assert!(f["l_t"].as_f64().unwrap() >= 10.0 * l_true.abs(), "{f}");
        }
    }
}

#[test]
fn structure_check_passes_on_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = small("structure-check", dir.path(), &["generic.samples=2", "state.nv=16", "state.vmax=6.0"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("AC-8"));
    assert!(dir.path().join("structure.json").exists());
}

#[test]
fn plot_data_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small("run", dir.path(), &[]).status.success());
    let stream = dir.path().join("diagnostics.ndjson");
    let t1 = dir.path().join("t1");
    let t2 = dir.path().join("t2");
    for t in [&t1, &t2] {
        let out = fbe(&["plot-data", stream.to_str().unwrap(), "--out", t.to_str().unwrap()], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let h = std::fs::read_to_string(t1.join("entropy.csv")).unwrap();
    assert_eq!(h, std::fs::read_to_string(t2.join("entropy.csv")).unwrap());
    let vals: Vec<f64> = h.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 6);
    assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");

    let empty = dir.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let te = dir.path().join("te");
    assert!(fbe(&["plot-data", empty.to_str().unwrap(), "--out", te.to_str().unwrap()], &[]).status.success());
    assert_eq!(std::fs::read_to_string(te.join("mass.csv")).unwrap(), "step,time,value\n");

    let bad = dir.path().join("bad.ndjson");
    let mut text = std::fs::read_to_string(&stream).unwrap();
    text.push_str("not json\n");
    std::fs::write(&bad, text).unwrap();
    let out = fbe(&["plot-data", bad.to_str().unwrap(), "--out", te.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 7"));
}

#[test]
fn dvm_table_is_built_then_reused() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cache/table.txt");
    let o = format!("geometry.dvm_table={:?}", table.to_str().unwrap());
    let first = small("dvm-table", dir.path(), &[&o]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let bytes = std::fs::read(&table).unwrap();
    let second = small("dvm-table", dir.path(), &[&o]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(bytes, std::fs::read(&table).unwrap());
    // a run with the cached table matches one that builds its own
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small("run", a.path(), &[&o]).status.success());
    assert!(small("run", b.path(), &[]).status.success());
    assert_eq!(
        std::fs::read(a.path().join("diagnostics.ndjson")).unwrap(),
        std::fs::read(b.path().join("diagnostics.ndjson")).unwrap()
    );
    // a table for another lattice is refused
    let c = tempfile::tempdir().unwrap();
    assert_eq!(small("run", c.path(), &[&o, "state.nv=10"]).status.code(), Some(3));
}

#[test]
fn checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small("run", dir.path(), &["solver.checkpoint_every=2", "solver.checkpoint_format=\"text\""]).status.success());
    let cp = dir.path().join("checkpoints");
    let mut names: Vec<String> = std::fs::read_dir(&cp).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["step_000000.snap", "step_000002.snap", "step_000004.snap"]);
    // a checkpoint restarts a run
    let snap = cp.join("step_000004.snap");
    let o = format!("state.initial={{kind=\"snapshot\", path={:?}}}", snap.to_str().unwrap());
    let next = tempfile::tempdir().unwrap();
    let out = small("run", next.path(), &[&o]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn quadrature_relax_reports_moment_drifts_without_bounding_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbe(
        &["run", "--out", dir.path().to_str().unwrap(), "--workers", "1"],
        &[
            "state.nx=2",
            "state.nv=16",
            "solver.t_end=0.05",
            "collision.backend={kind=\"quadrature\", n_omega=16}",
        ],
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.lines().any(|l| l.starts_with("INFO AC-1 relative energy drift")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("PASS AC-1 relative mass drift")), "{stdout}");
    let recs = lines(&dir.path().join("diagnostics.ndjson"));
    assert_eq!(recs.len(), 6);
}
