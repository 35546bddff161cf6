use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ma-sharp"));
    c.env_remove("MA_SHARP_PROFILE").env_remove("MA_SHARP_SEED");
    c
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn constants_report() {
    let t = tempfile::tempdir().unwrap();
    let st = bin().arg("--out").arg(t.path()).args(["constants", "--n", "3"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let r = report(t.path());
    assert_eq!(r["passed"], true);
    assert!((r["results"]["d_n0"].as_f64().unwrap() - 0.883319375142725).abs() < 1e-12);
    assert!((r["results"]["omega_n"].as_f64().unwrap() - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    assert!(t.path().join("summary.txt").exists());
}

#[test]
fn radial_table() {
    let t = tempfile::tempdir().unwrap();
    let st = bin().arg("--out").arg(t.path()).args(["radial", "--rows", "11"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(t.path().join("tables/radial_w.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r,w,gap");
    assert_eq!(lines.len(), 12);
    let last: Vec<f64> = lines[11].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(last[0], 200.0);
    // gap ~ 1/(3r) for n = 3, a = 1
    assert!((last[2] * 600.0 - 1.0).abs() < 1e-3, "{}", last[2]);
}

#[test]
fn solve_from_config() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("solve.json");
    std::fs::write(
        &cfg,
        r#"{"domain":{"A":[1,0,0,1],"center":[0,0],"radius":1.0},"spacing":0.125,
            "boundary":{"A":[1,0,0,1],"b":[0,0],"c":0},
            "target":{"n":2,"atoms":[{"y":[0.25,0],"mass":0.3}]}}"#,
    )
    .unwrap();
    let out = t.path().join("out");
    let st = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("solve").status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(report(&out)["results"]["report"]["converged"], true);
    assert!(out.join("tables/nodes.csv").exists());
}

#[test]
fn schema_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.json");
    std::fs::write(&cfg, r#"{"domain":3}"#).unwrap();
    let st = bin().arg("--config").arg(&cfg).arg("--out").arg(t.path()).arg("solve").status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().arg("--out").arg(t.path()).arg("solve").status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn verify_all_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let st = bin()
            .arg("--out")
            .arg(dir)
            .args(["--seed", "7", "--profile", "smoke", "verify-all", "--criteria", "1,2,11"])
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
        std::fs::read_to_string(dir.join("report.json")).unwrap()
    };
    let a = run(&t.path().join("a"));
    let b = run(&t.path().join("b"));
    assert_eq!(a, b);
    let r: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(r["seed"], 7);
    assert_eq!(r["passed"], true);
}
