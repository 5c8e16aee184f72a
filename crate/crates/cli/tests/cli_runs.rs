use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], config: &Value, dir: &Path) -> Output {
    let cfg = dir.join("scenario.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_hoferlab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .unwrap()
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn sphere_sweep() -> Value {
    json!({
        "schema_version": 1,
        "name": "sweep",
        "domain": { "kind": "sphere" },
        "params": { "K": 1.0 },
        "profile": "0.5*K*z^2",
        "operation": {
            "kind": "sweep",
            "parameter": "K",
            "values": { "from": 20, "to": 220, "steps": 21 },
            "inner": { "kind": "sphere-certificate" }
        },
        "outputs": { "report": "sweep.json", "csv": "sweep.csv" }
    })
}

#[test]
fn sphere_sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep"], &sphere_sweep(), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["K", "c", "verdict"]);
    let rows: Vec<(f64, f64, String)> = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].to_string())
        })
        .collect();
    assert_eq!(rows.len(), 21);
    let k_star = 36.0 * std::f64::consts::PI;
    for w in rows.windows(2) {
        assert!(w[1].1 >= w[0].1);
    }
    for (k, c, verdict) in &rows {
        assert_eq!(verdict == "CERTIFIED", *k > k_star, "K = {k}, c = {c}");
    }
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sphere_sweep();
    assert!(run(&["run"], &cfg, dir.path()).status.success());
    let first = std::fs::read(dir.path().join("sweep.json")).unwrap();
    let first_csv = std::fs::read(dir.path().join("sweep.csv")).unwrap();
    assert!(run(&["run", "--threads", "1"], &cfg, dir.path()).status.success());
    assert_eq!(std::fs::read(dir.path().join("sweep.json")).unwrap(), first);
    assert_eq!(std::fs::read(dir.path().join("sweep.csv")).unwrap(), first_csv);
    let v: Value = serde_json::from_slice(&first).unwrap();
    for key in ["scenario", "inputs", "verdict", "values", "residuals", "tolerances"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert!(v.get("runtime_seconds").is_none());
    assert!(run(&["run", "--runtime"], &cfg, dir.path()).status.success());
    assert!(report(dir.path(), "sweep.json")["runtime_seconds"].is_number());
}

#[test]
fn two_bump_windows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "name": "bumps",
        "sampling": { "kind": "box", "lo": [-2, -1], "hi": [2, 1], "n": 41 },
        "time_panels": 64,
        "hamiltonian": { "builtin": "two_bump" },
        "operation": { "kind": "geodesic-check", "windows": 3 },
        "outputs": { "report": "bumps.json", "csv": "windows.csv" }
    });
    let out = run(&["geodesic-check", "--tol", "tol_ext=1e-3"], &cfg, dir.path());
    // a FAIL verdict is still a computed verdict
    assert!(out.status.success());
    let r = report(dir.path(), "bumps.json");
    assert_eq!(r["tolerances"]["tol_ext"], 1e-3);
    let w = r["values"]["windows"].as_array().unwrap();
    assert_eq!(w.len(), 3);
    // the maximum jumps bumps at t = 1/3, a window edge
    assert!(w.iter().all(|w| w["pass"] == true), "{w:?}");
    let cfg2 = {
        let mut c = cfg.clone();
        c["operation"]["windows"] = json!(2);
        c
    };
    assert!(run(&["geodesic-check"], &cfg2, dir.path()).status.success());
    let r = report(dir.path(), "bumps.json");
    assert_eq!(r["verdict"], "FAIL");
    assert_eq!(r["values"]["windows"][0]["fixed_maxima"], 0);
}

#[test]
fn expression_hamiltonian_on_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "domain": { "kind": "sphere" },
        "sampling": { "kind": "sphere", "n_theta": 16, "n_z": 33 },
        "hamiltonian": { "expr": "z" },
        "operation": { "kind": "length" },
        "outputs": { "report": "len.json" }
    });
    assert!(run(&["length"], &cfg, dir.path()).status.success());
    let r = report(dir.path(), "len.json");
    assert!((r["value"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn quadratic_form_trichotomy_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = vec![];
    for c in [0.9, 1.0, 1.1] {
        let cfg = json!({
            "schema_version": 1,
            "params": { "c": c },
            "hessian": { "matrix": [["2*pi*c", 0], [0, "2*pi*c"]] },
            "operation": { "kind": "qform" },
            "outputs": { "report": "q.json" }
        });
        assert!(run(&["qform"], &cfg, dir.path()).status.success());
        let r = report(dir.path(), "q.json");
        seen.push((r["values"]["index"].as_u64().unwrap(), r["values"]["nullity"].as_u64().unwrap()));
    }
    assert_eq!(seen[0], (0, 0));
    assert_eq!(seen[1], (0, 2));
    assert!(seen[2].0 >= 1);
}

#[test]
fn lemma_checks_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "operation": { "kind": "verify-lemma", "lemma": "z", "loop": { "shape": "ellipse", "a": 1.0, "b": 0.4 } },
        "outputs": { "report": "z.json" }
    });
    assert!(run(&["verify-lemma"], &cfg, dir.path()).status.success());
    let r = report(dir.path(), "z.json");
    assert_eq!(r["verdict"], "PASS");
    assert!(r["residuals"]["relative"].as_f64().unwrap() <= 1e-3);
    let cfg = json!({
        "schema_version": 1,
        "hessian": { "matrix": [["4*pi", 0], [0, "4*pi"]] },
        "operation": { "kind": "verify-lemma", "lemma": "lambda" },
        "outputs": { "report": "l.json" }
    });
    assert!(run(&["verify-lemma"], &cfg, dir.path()).status.success());
    let r = report(dir.path(), "l.json");
    assert_eq!(r["verdict"], "PASS");
    assert!((r["values"]["lambda"].as_f64().unwrap() - 0.5).abs() < 1e-8);
}

#[test]
fn malformed_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schema_version": 9,
        "extra": true,
        "domain": { "kind": "torus" },
        "hamiltonian": { "expr": "sin(x1" },
        "operation": { "kind": "qform", "modes": 0 },
        "tolerances": { "bogus": 1.0 }
    });
    let out = run(&["run"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["schema_version", "extra", "domain.kind", "hamiltonian.expr: 1:7", "operation.modes", "tolerances.bogus", "requires `hessian`"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
    assert!(std::fs::read_dir(dir.path()).unwrap().count() == 1, "nothing but the config is written");
    let out = run(&["run", "--tol", "nope=1"], &json!({ "schema_version": 1 }), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("operation.kind"));
}

#[test]
fn refusals_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // h'(±1) = ±π meets 2π(ℤ + ½)
    let cfg = json!({
        "schema_version": 1,
        "domain": { "kind": "sphere" },
        "profile": "pi*z",
        "operation": { "kind": "sphere-certificate" }
    });
    let out = run(&["sphere-certificate"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("πℤ"));
}

#[test]
fn parse_subcommand() {
    let out = Command::new(env!("CARGO_BIN_EXE_hoferlab")).args(["parse", "sin("]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1:5"));
    let out = Command::new(env!("CARGO_BIN_EXE_hoferlab"))
        .args(["parse", "0.5*K*z^2", "--wrt", "z"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), "0.5*K*z^2\n0.5*K*(2*z)\n");
}
