use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pclattice"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn manifest(dir: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn path_arg(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn equilibria_table_and_folds() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["equilibria", "--out", &path_arg(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("equilibria.csv")).unwrap();
    let mid = csv
        .lines()
        .find(|l| l.starts_with("0.5,"))
        .expect("theta = 0.5 row");
    let cols: Vec<&str> = mid.split(',').collect();
    assert_eq!(cols[2], "0.5");
    assert_eq!(&cols[4..], ["stable", "unstable", "stable"]);
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let theta: f64 = cols[0].parse().unwrap();
        for x in cols[1..4].iter().filter(|c| !c.is_empty()) {
            let x: f64 = x.parse().unwrap();
            let s = 1.0 / (1.0 + (-16.0 * (x - theta)).exp());
            assert!((x - s).abs() < 1e-12);
        }
    }
    let folds = &manifest(tmp.path(), "equilibria")["details"]["folds"];
    assert!((folds["theta_star"].as_f64().unwrap() - 0.2316).abs() < 1e-4);
    assert!((folds["theta_sup_star"].as_f64().unwrap() - 0.7684).abs() < 1e-4);
}

#[test]
fn checksums_match_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["simulate", "--q", "0.6", "--layers", "30", "--t-end", "20", "--out", &path_arg(tmp.path())]);
    assert_eq!(code(&out), 0);
    let m = manifest(tmp.path(), "simulate");
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for entry in outputs {
        let bytes = std::fs::read(tmp.path().join(entry["file"].as_str().unwrap())).unwrap();
        assert_eq!(entry["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(entry["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["timings"]["total_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn sweeps_are_reproducible_across_job_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let base = ["sign-map", "--thetas", "0.4,0.6", "--qs", "0.2,0.8"];
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        let mut args = base.to_vec();
        let out = path_arg(dir.path());
        args.extend(["--jobs", jobs, "--out", &out]);
        assert_eq!(code(&run(&args)), 0);
    }
    let x = std::fs::read(a.path().join("sign_map.csv")).unwrap();
    let y = std::fs::read(b.path().join("sign_map.csv")).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("theta,q,c_ud,c_du,sign_ud,sign_du,flags\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn manifest_config_reproduces_the_run() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let first = run(&["simulate", "--theta", "0.45", "--layers", "25", "--t-end", "15", "--out", &path_arg(a.path())]);
    assert_eq!(code(&first), 0);
    let m = a.path().join("simulate.manifest.json");
    let second = run(&["simulate", "--config", &path_arg(&m), "--out", &path_arg(b.path())]);
    assert_eq!(code(&second), 0);
    for file in ["trajectory.csv", "trajectory.json"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap()
        );
    }
}

#[test]
fn precedence_holds_for_every_key() {
    // (key, flag, file value, flag value)
    let cases: Vec<(&str, &str, Value, Value)> = vec![
        ("theta", "--theta", json!(0.45), json!(0.55)),
        ("mu", "--mu", json!(12.0), json!(20.0)),
        ("p", "--p", json!(0.05), json!(0.15)),
        ("q", "--q", json!(0.3), json!(0.6)),
        ("dt", "--dt", json!(0.02), json!(0.04)),
        ("t_end", "--t-end", json!(50.0), json!(70.0)),
        ("layers", "--layers", json!(40), json!(60)),
        ("method", "--method", json!("euler"), json!("rk4")),
        ("jobs", "--jobs", json!(2), json!(3)),
        ("topology", "--topology", json!("top-down"), json!("bottom-up")),
        ("closure", "--closure", json!("dirichlet-equilibrium"), json!("inverse-sigmoid")),
        ("guard", "--guard", json!(5), json!(7)),
        ("direction", "--direction", json!("u->d"), json!("d->u")),
        ("input", "--input", json!("flashed"), json!("constant")),
        ("s0", "--s0", json!(0.7), json!(0.9)),
        ("tau", "--tau", json!(3.0), json!(4.0)),
        ("sample_every", "--sample-every", json!(5), json!(10)),
        ("c_tol", "--c-tol", json!(0.002), json!(0.003)),
        ("s0_max", "--s0-max", json!(3.0), json!(4.0)),
        ("tau_max", "--tau-max", json!(100.0), json!(200.0)),
        ("thetas", "--thetas", json!([0.4]), json!([0.6])),
        ("qs", "--qs", json!([0.2]), json!([0.8])),
        ("ps", "--ps", json!([0.05]), json!([0.15])),
        ("s0_levels", "--s0-levels", json!([0.6]), json!([0.9])),
        ("theta_min", "--theta-min", json!(0.1), json!(0.2)),
        ("theta_max", "--theta-max", json!(0.8), json!(0.9)),
        ("theta_steps", "--theta-steps", json!(11), json!(21)),
    ];
    let tmp = TempDir::new().unwrap();
    let out = path_arg(&tmp.path().join("out"));
    assert_eq!(code(&run(&["equilibria", "--out", &out])), 0);
    let defaults = manifest(&tmp.path().join("out"), "equilibria")["config"].clone();
    for (key, flag, file_value, flag_value) in cases {
        assert_ne!(defaults[key], file_value, "{key}: pick a non-default file value");
        let cfg = tmp.path().join(format!("{key}.json"));
        std::fs::write(&cfg, json!({ key: file_value }).to_string()).unwrap();
        let cfg = path_arg(&cfg);

        let r = run(&["equilibria", "--config", &cfg, "--out", &out]);
        assert_eq!(code(&r), 0, "{key}: {}", String::from_utf8_lossy(&r.stderr));
        let m = manifest(&tmp.path().join("out"), "equilibria");
        assert_eq!(m["config"][key], file_value, "{key}: file should beat default");

        let text = match &flag_value {
            Value::Array(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let r = run(&["equilibria", "--config", &cfg, flag, &text, "--out", &out]);
        assert_eq!(code(&r), 0, "{key}: {}", String::from_utf8_lossy(&r.stderr));
        let m = manifest(&tmp.path().join("out"), "equilibria");
        assert_eq!(m["config"][key], flag_value, "{key}: flag should beat file");
    }

    let cfg = tmp.path().join("out.json");
    let file_out = path_arg(&tmp.path().join("from-file"));
    std::fs::write(&cfg, json!({ "out": file_out }).to_string()).unwrap();
    assert_eq!(code(&run(&["equilibria", "--config", &path_arg(&cfg)])), 0);
    assert!(tmp.path().join("from-file/equilibria.csv").exists());
    assert_eq!(code(&run(&["equilibria", "--config", &path_arg(&cfg), "--out", &out])), 0);
    assert!(tmp.path().join("out/equilibria.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = path_arg(tmp.path());

    assert_eq!(code(&run(&["speed", "--bogus"])), 2);
    assert_eq!(code(&run(&["speed", "--mu", "3", "--out", &out])), 2);
    assert_eq!(code(&run(&["speed", "--p", "0.5", "--out", &out])), 2);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"zeta": 1}"#).unwrap();
    assert_eq!(code(&run(&["speed", "--config", &path_arg(&bad), "--out", &out])), 2);
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(code(&run(&["speed", "--config", &path_arg(&bad), "--out", &out])), 2);

    let diverge = run(&["simulate", "--method", "euler", "--dt", "100", "--t-end", "100000", "--layers", "10", "--out", &out]);
    assert_eq!(code(&diverge), 3);
    assert!(String::from_utf8_lossy(&diverge.stderr).contains("diverged"));

    // A bottom-up front at theta = 0.5, q = 0.4 runs into the far edge of a short lattice.
    let guard = run(&["simulate", "--topology", "bottom-up", "--layers", "20", "--t-end", "80", "--out", &out]);
    assert_eq!(code(&guard), 4);
    assert_eq!(manifest(tmp.path(), "simulate")["details"]["guard_triggered"], true);

    assert_eq!(code(&run(&["speed", "--q", "0.4", "--out", &out])), 0);
}

#[test]
fn combined_map_shows_all_four_regimes() {
    let tmp = TempDir::new().unwrap();
    let out = run(&[
        "combined", "--theta", "0.35", "--qs", "0.2,0.5,0.9", "--s0-levels", "0.29,2", "--out", &path_arg(tmp.path()),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(tmp.path().join("combined.csv")).unwrap();
    assert!(csv.starts_with("q,s0,s0_star_bottom_up,s0_star_top_down,label\n"));
    for label in ["both-stagnate", "both-propagate", "bottom-up-only", "top-down-only"] {
        assert!(csv.lines().any(|l| l.ends_with(label)), "{label} missing:\n{csv}");
    }
}
