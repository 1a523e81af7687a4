use std::path::Path;
use std::process::{Command, Output};

fn prfem(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prfem"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn header_hash(text: &str) -> &str {
    let line = text.lines().find(|l| l.contains("config-sha256:")).expect("hash line");
    line.split("config-sha256:").nth(1).unwrap().trim()
}

#[test]
fn verify_writes_reports_with_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = prfem(&["verify", "--element", "TH2", "--levels", "2", "--seed", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let base = dir.path().join("verify");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_sha256"].as_str().unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    for ext in ["csv", "md", "dat"] {
        let text = std::fs::read_to_string(base.join(format!("checks.{ext}"))).unwrap();
        assert_eq!(header_hash(&text), hash, "{ext}");
        assert!(text.contains("\"coefficient\":1e-8"));
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(base.join("checks.csv"))
        .unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["check", "value", "criterion", "status"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!(&r[3], "pass");
        r[1].parse::<f64>().unwrap();
    }
}

#[test]
fn reports_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["gradient-forcing", "--element", "TH2", "--levels", "4,8"];
    assert!(prfem(&args, a.path()).status.success());
    assert!(prfem(&args, b.path()).status.success());
    for f in ["TH2_nu1e-3.csv", "TH2_nu1e-3.md", "TH2_nu1e-3.dat", "checks.csv", "manifest.json"] {
        let x = std::fs::read(a.path().join("gradient-forcing").join(f)).unwrap();
        let y = std::fs::read(b.path().join("gradient-forcing").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn failing_checks_set_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"tolerances": {"velocity_eoc": 0.0, "pressure_eoc": 0.0}}"#).unwrap();
    let o = prfem(
        &["convergence", "--config", cfg.to_str().unwrap(), "--element", "TH2", "--levels", "2,4", "--reconstruct", "on"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    let csv = std::fs::read_to_string(dir.path().join("convergence/TH2_modified_nu1e-3.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("n,h,ndof_u")));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"levels": [4], "unknown_field": 1}"#).unwrap();
    let o = prfem(&["verify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_field"));

    let o = prfem(&["navier-stokes", "--element", "mini"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = prfem(&["convergence", "--element", "TH7"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
