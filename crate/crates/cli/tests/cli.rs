use std::path::Path;
use std::process::{Command, Output};

fn khep(catalog: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_khep"))
        .arg("--catalog")
        .arg(catalog)
        .args(args)
        .env_remove("KHEP_CATALOG")
        .output()
        .expect("run khep")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stored_hash(o: &Output) -> String {
    let text = stdout(o);
    let line = text
        .lines()
        .find(|l| l.starts_with("stored "))
        .expect("stored line");
    line.split_whitespace().nth(2).unwrap().to_string()
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = khep(dir.path(), &["integrate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = khep(dir.path(), &["integrate", "--state", "0,0,0,0,0,1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = khep(dir.path(), &["search", "--target", "3/2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn integrate_writes_a_trajectory_entry() {
    let dir = tempfile::tempdir().unwrap();
    let o = khep(
        dir.path(),
        &["integrate", "--ptheta", "0.164", "--tmax", "5"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = stored_hash(&o);
    let entry = dir.path().join("trajectory").join(&hash);
    for f in [
        "params.json",
        "summary.txt",
        "trajectory.csv",
        "trajectory.khep",
    ] {
        assert!(entry.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(entry.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,z,px,py,pz,H,ptheta,J\n"));

    // identical run, identical entry
    let again = khep(
        dir.path(),
        &["integrate", "--ptheta", "0.164", "--tmax", "5"],
    );
    assert_eq!(stored_hash(&again), hash);

    let v = khep(dir.path(), &["catalog", "verify", &hash[..8]]);
    assert!(v.status.success());
    let l = khep(dir.path(), &["catalog", "list", "--kind", "trajectory"]);
    assert!(stdout(&l).contains(&hash));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nh = 1e-2\ntmax = 1\nmethod = gauss2\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let a = khep(
        dir.path(),
        &["--config", cfg, "integrate", "--ptheta", "0.2"],
    );
    assert!(a.status.success());
    let b = khep(
        dir.path(),
        &[
            "--config",
            cfg,
            "integrate",
            "--ptheta",
            "0.2",
            "--h",
            "2e-2",
        ],
    );
    assert!(b.status.success());
    let read = |o: &Output| {
        let p = dir
            .path()
            .join("trajectory")
            .join(stored_hash(o))
            .join("params.json");
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
        v["integrator"].clone()
    };
    assert_eq!(read(&a)["step_size"], 1e-2);
    assert_eq!(read(&a)["method"], "gauss2");
    assert_eq!(read(&b)["step_size"], 2e-2);

    std::fs::write(dir.path().join("bad.cfg"), "h = fast\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    let o = khep(
        dir.path(),
        &[
            "--config",
            bad.to_str().unwrap(),
            "integrate",
            "--ptheta",
            "0.2",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn search_then_selfsim_from_orbit() {
    let dir = tempfile::tempdir().unwrap();
    let o = khep(dir.path(), &["search", "--target", "1/2", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = stored_hash(&o);
    let entry = dir.path().join("orbit").join(&hash);
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(entry.join("orbit.json")).unwrap()).unwrap();
    assert!(rec["objective"].as_f64().unwrap() <= 1e-10);

    let s = khep(dir.path(), &["selfsim", "--from-orbit", &hash]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let d = dir.path().join("domain").join(stored_hash(&s));
    for f in ["domain.json", "domain.csv", "overlay.csv"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = khep(
        dir.path(),
        &["--sequential", "experiment", "z-axis", "--z0", "-2"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("consistent"));
    let r = dir.path().join("report").join(stored_hash(&o));
    assert!(r.join("report.json").is_file());
}

#[test]
fn failed_integration_keeps_partial_data() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "integrate",
        "--state",
        "1,0,0,0,0.15,0.1",
        "--method",
        "gauss2",
        "--h",
        "2e-3",
        "--tmax",
        "200",
    ];
    let o = khep(dir.path(), &args);
    assert_eq!(o.status.code(), Some(1));
    let entry = dir.path().join("trajectory").join(stored_hash(&o));
    let summary = std::fs::read_to_string(entry.join("summary.txt")).unwrap();
    assert!(summary.contains("failure"));
    assert!(
        std::fs::metadata(entry.join("trajectory.khep"))
            .unwrap()
            .len()
            > 14
    );
}

#[test]
fn scan_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "scan",
        "--ptheta-min",
        "0.15",
        "--ptheta-max",
        "0.2",
        "--steps",
        "2",
        "--seed",
        "42",
    ];
    let a = khep(dir.path(), &args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let sequential: Vec<&str> = std::iter::once("--sequential").chain(args).collect();
    let b = khep(dir.path(), &sequential);
    assert_eq!(stored_hash(&a), stored_hash(&b));
    let csv = std::fs::read_to_string(
        dir.path()
            .join("report")
            .join(stored_hash(&a))
            .join("scan.csv"),
    )
    .unwrap();
    assert!(csv.starts_with("ptheta,seed_rotation,orbit_ptheta,rotation,j,k,error\n"));
    assert_eq!(csv.lines().count(), 3);
}
