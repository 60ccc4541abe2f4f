use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tbqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbqkd")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn stderr_kind(o: &Output) -> String {
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).expect("machine-readable diagnostics");
    v["kind"].as_str().unwrap().to_string()
}

const SWEEP: &str =
    "[protocol]\nmu_photons = 1.487\ntau_snu = 1.641\n[sweep]\ndistances_km = [0.0, 20.0]\nmodel = \"ideal\"\nphotons = [1, 2]\n";

#[test]
fn empty_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "");
    let o = tbqkd(&["sweep", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_kind(&o), "config");
}

#[test]
fn invalid_configs_exit_2_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    for (name, text, cmd) in [
        ("unknown.toml", "[channel]\nlength_km = 3\n", "sweep"),
        ("missing.toml", SWEEP, "decoy-compare"),
        ("negative.toml", &SWEEP.replace("[0.0, 20.0]", "[-1.0]"), "sweep"),
        ("tags.toml", &SWEEP.replace("[1, 2]", "[9]"), "sweep"),
    ] {
        let cfg = write(dir.path(), name, text);
        let o = tbqkd(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(!out.join("manifest.json").exists(), "{name}");
    }
    let o = tbqkd(&["sweep", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = tbqkd(&["reproduce", "--target", "fig9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SWEEP);
    let out = dir.path().join("o");
    let o = tbqkd(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "distance_km,model,photons,rate,e_z,plob");
    assert_eq!(lines.len(), 5);
    assert!(lines[2].starts_with("0,ideal,2,0.126"));
    // Negative rates are reported as computed.
    assert!(lines[1].split(',').nth(3).unwrap().starts_with('-'));
    let m = manifest(&out);
    assert_eq!(m["command"], "sweep");
    assert_eq!(m["artifacts"][0]["file"], "sweep.csv");
}

#[test]
fn replay_reproduces_artifacts_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "f.toml",
        "[protocol]\nmu_photons = 0.924\ntau_snu = 2.457\nnu1_photons = 2.993e-2\nnu2_photons = 1e-4\n\
         [finite]\ndistance_km = 10.0\nrounds = 20000\nepsilon = 0.01\nepsilon_pa = 0.01\nsimulation = \"rounds\"\nwrite_rounds = true\n",
    );
    let a = dir.path().join("a");
    let o = tbqkd(&["finite-size", "--config", &cfg, "--seed", "11", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&a);
    assert_eq!(m["seed"], 11);
    let b = dir.path().join("b");
    let o = tbqkd(&["finite-size", "--config", a.join("config.toml").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    let mb = manifest(&b);
    assert_eq!(m["artifacts"], mb["artifacts"]);
    assert_eq!(m["config_sha256"], mb["config_sha256"]);
    for f in ["finite_size.json", "rounds.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rounds = fs::read_to_string(a.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 20001);
    let c = dir.path().join("c");
    tbqkd(&["finite-size", "--config", &cfg, "--seed", "12", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("rounds.csv")).unwrap(), fs::read(c.join("rounds.csv")).unwrap());
}

#[test]
fn json_floats_are_decimal_strings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.toml",
        "[protocol]\nmu_photons = 1.487\ntau_snu = 1.641\nnu1_photons = 0.1737\nnu2_photons = 1e-4\n[decoy]\ndistances_km = [0.0]\n",
    );
    let out = dir.path().join("o");
    assert!(tbqkd(&["decoy-compare", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("decoy_compare.json")).unwrap()).unwrap();
    let r = v[0]["rate_decoy"].as_str().expect("string");
    let x: f64 = r.parse().unwrap();
    assert!(x > 0.0 && x < 1.0);
    assert_eq!(x.to_string(), r);
}

#[test]
fn optimize_and_tomography_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "o.toml",
        "seed = 3\n[search]\ndistances_km = [5.0]\nobjective = \"ideal\"\nphotons = 1\nmu_points = 8\n\
         [tomography]\nrounds = 5000\n",
    );
    let out = dir.path().join("o");
    let o = tbqkd(&["optimize", "--config", &cfg, "--threads", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("optimize.csv")).unwrap().lines().count(), 2);
    assert_eq!(manifest(&out)["threads"], 2);
    let t = dir.path().join("t");
    assert!(tbqkd(&["tomo-verify", "--config", &cfg, "--out", t.to_str().unwrap()]).status.success());
    // 5 source configurations, 12 observables each.
    assert_eq!(fs::read_to_string(t.join("tomography.csv")).unwrap().lines().count(), 61);
}

#[test]
fn reproduce_contributions_need_no_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = tbqkd(&["reproduce", "--target", "fig3b", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("fig3b.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let parts: f64 = line.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((parts - 1.0).abs() < 1e-6, "{line}");
    }
    assert_eq!(manifest(&out)["command"], "reproduce --target fig3b");
}
