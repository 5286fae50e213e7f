use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn scenario(name: &str) -> PathBuf {
    fixtures().join(format!("scenarios/{name}.toml"))
}

/// Copy of a fixture scenario in `dir` with absolute file paths and the given
/// `(from, to)` text edits applied.
fn edited(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let root = fixtures().canonicalize().unwrap();
    let mut text = fs::read_to_string(scenario(name)).unwrap().replace("\"../", &format!("\"{}/", root.display()));
    for (from, to) in edits {
        assert!(text.contains(from), "{from:?} not in {name}");
        text = text.replace(from, to);
    }
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn flatpwa(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatpwa"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn enumerate_reports_the_cell_counts() {
    let tmp = TempDir::new().unwrap();
    for (name, count) in [("aircraft_mpc", 3), ("uav_mpc", 14), ("pmsm_case1", 10)] {
        let out = tmp.path().join(name);
        let o = flatpwa("enumerate", &scenario(name), &out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = json(&out.join("cells.json"));
        assert_eq!(r["count"], count);
        assert_eq!(r["cells"].as_array().unwrap().len(), count);
        let cell = &r["cells"][0];
        assert_eq!(cell["theta"].as_array().unwrap().len(), cell["theta_rhs"].as_array().unwrap().len());
        assert_eq!(cell["vertex_count"], cell["vertices"].as_array().unwrap().len());
    }
}

#[test]
fn certify_writes_the_certificate_and_taylor_table() {
    let tmp = TempDir::new().unwrap();
    let o = flatpwa("certify", &scenario("aircraft_mpc"), tmp.path(), &["--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("certificate.json"));
    let eps = r["certificate"]["eps_bar"][0].as_f64().unwrap();
    assert!((eps - 0.1897).abs() <= 0.02);
    assert_eq!(r["off_grid"]["seed"], 3);
    assert_eq!(r["off_grid"]["sound"], true);
    assert_eq!(r["taylor"].as_array().unwrap().len(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("+++"));
}

#[test]
fn certify_budget_exits_with_3() {
    let tmp = TempDir::new().unwrap();
    let o = flatpwa("certify", &scenario("aircraft_mpc"), tmp.path(), &["--budget-ms", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_writes_trace_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited(tmp.path(), "aircraft_mpc", &[("duration = 10.0", "duration = 2.0")]);
    let o = flatpwa("simulate", &cfg, tmp.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,z1,z2,u1,v1,cell_index,solver_ms\n"));
    assert_eq!(csv.lines().count(), 22);
    let s = json(&tmp.path().join("summary.json"));
    assert_eq!(s["summary"]["input_violations"], 0);
    assert_eq!(s["controller"], "mpc");
    assert!(s["aborted"].is_null());
}

#[test]
fn single_threaded_simulations_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited(
        tmp.path(),
        "aircraft_mpc",
        &[("duration = 10.0", "duration = 3.0\nrecord_timing = false")],
    );
    let run = |dir: &str| {
        let out = tmp.path().join(dir);
        let o = flatpwa("simulate", &cfg, &out, &["--threads", "1"]);
        assert!(o.status.success());
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn infeasible_start_exits_with_2() {
    let tmp = TempDir::new().unwrap();
    // beyond the stall bound, so no admissible forecast exists
    let cfg = edited(tmp.path(), "aircraft_mpc", &[("x0 = [0.25, 0.0]", "x0 = [0.34, 4.0]")]);
    let o = flatpwa("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&tmp.path().join("summary.json"));
    assert!(s["aborted"].is_string());
}

#[test]
fn config_errors_exit_with_4() {
    let tmp = TempDir::new().unwrap();
    let o = flatpwa("enumerate", &tmp.path().join("missing.toml"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(4));

    let cfg = edited(tmp.path(), "aircraft_mpc", &[("horizon = 5", "horizon = 5\nhorizn = 5")]);
    let o = flatpwa("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));

    let cfg = edited(tmp.path(), "aircraft_mpc", &[("big_m = 5000.0", "big_m = 1.0")]);
    let o = flatpwa("bigm", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(json(&tmp.path().join("bigm.json"))["override_ok"], false);

    let o = Command::new(env!("CARGO_BIN_EXE_flatpwa")).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bigm_reports_the_positive_cell() {
    let tmp = TempDir::new().unwrap();
    let o = flatpwa("bigm", &scenario("aircraft_mpc"), tmp.path(), &[]);
    assert!(o.status.success());
    let r = json(&tmp.path().join("bigm.json"));
    let m = r["cells"].as_array().unwrap().iter().find(|c| c["pattern"] == "+++").unwrap()["m_star"].as_f64().unwrap();
    assert!((m - 4.3247).abs() <= 1e-2, "{m}");
    assert_eq!(r["override_ok"], true);
}

#[test]
fn verify_clf_passes_and_fails() {
    let tmp = TempDir::new().unwrap();
    let o = flatpwa("verify-clf", &scenario("aircraft_clf"), tmp.path(), &[]);
    assert!(o.status.success());
    assert_eq!(json(&tmp.path().join("clf.json"))["pass"], true);

    let cfg = edited(tmp.path(), "aircraft_clf", &[("p = [[0.1430, 0.1932], [0.1932, 0.6378]]", "p = [[0.1430, 0.5], [0.5, 0.6378]]")]);
    let o = flatpwa("verify-clf", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    let r = json(&tmp.path().join("clf.json"));
    assert_eq!(r["pass"], false);
    assert!(r["pd_min_eig"].as_f64().unwrap() < 0.0);
}
