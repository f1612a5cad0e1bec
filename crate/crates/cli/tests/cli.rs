use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const RES: &[&str] = &["--m", "1", "--n", "1", "--nu", "1.2", "--inside", "--delta", "0.1", "--eta", "0.3", "--alpha", "0.2"];

fn reslab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reslab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("RESLAB_THREADS")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn resonance_orientation_follows_twist() {
    let cases: [&[&str]; 2] = [
        RES,
        &["--m", "2", "--n", "1", "--nu", "2.0", "--outside", "--delta", "0.1", "--eta", "0.3", "--alpha", "0.2"],
    ];
    for args in cases {
        let dir = tempfile::tempdir().unwrap();
        let mut full = vec!["resonance"];
        full.extend_from_slice(args);
        let o = reslab(dir.path(), &full);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = read_json(&dir.path().join("resonance.json"));
        let p = &r["pendulum"];
        let omega_1 = p["spec"]["omega_1"].as_f64().unwrap();
        let above = p["h_sd"].as_f64().unwrap() > p["h_sk"].as_f64().unwrap();
        assert_eq!(above, omega_1 > 0.0);
        assert_eq!(r["saddle_above_center"].as_bool().unwrap(), above);
        let lambda = r["lambda"].as_f64().unwrap();
        let delta = (p["h_sd"].as_f64().unwrap() - p["h_sk"].as_f64().unwrap()).abs();
        let v = r["escape_measure"].as_f64().unwrap();
        assert!((v - lambda.abs() * delta).abs() <= 1e-8 * v.abs());
        let csv = fs::read_to_string(dir.path().join("resonance_h.csv")).unwrap();
        assert!(csv.starts_with("psi,hcal\r\n"));
    }
}

#[test]
fn manifest_hashes_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["resonance"];
    args.extend_from_slice(RES);
    assert!(reslab(dir.path(), &args).status.success());
    let m = read_json(&dir.path().join("resonance_manifest.json"));
    assert_eq!(m["command"], "resonance");
    for f in m["files"].as_array().unwrap() {
        let bytes = fs::read(dir.path().join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = vec!["exit-time"];
    args.extend_from_slice(RES);
    args.extend_from_slice(&["--sigma", "0.7", "--eps", "0.3", "--paths", "40", "--seed", "11"]);
    let oa = reslab(a.path(), &args);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let mut threaded = vec!["--threads", "3"];
    threaded.extend_from_slice(&args);
    assert!(reslab(b.path(), &threaded).status.success());
    for name in ["exit_time.csv", "exit_time.json", "exit-time_manifest.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"resonance": {"m": 1, "n": 1, "nu": 1.2, "side": "inside", "delta": 0.1, "eta": 0.3, "alpha": 0.2, "samples": 9}}"#,
    )
    .unwrap();
    let o = reslab(dir.path(), &["--config", cfg.to_str().unwrap(), "resonance", "--samples", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("resonance_h.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let m = read_json(&dir.path().join("resonance_manifest.json"));
    assert_eq!(m["params"]["samples"], 4);
    assert_eq!(m["params"]["sigma"], 0.1);

    fs::write(&cfg, r#"{"resonance": {"bogus": 1}}"#).unwrap();
    let o = reslab(dir.path(), &["--config", cfg.to_str().unwrap(), "resonance"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = reslab(dir.path(), &["resonance", "--m", "1", "--n", "1", "--inside"]);
    assert_eq!(o.status.code(), Some(64));
    let o = reslab(dir.path(), &["resonance", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(64));

    let mut args = vec!["exit-time"];
    args.extend_from_slice(RES);
    args.extend_from_slice(&["--sigma", "0"]);
    let o = reslab(dir.path(), &args);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("exit_time.csv").exists());

    let o = reslab(
        dir.path(),
        &["resonance", "--m", "1", "--n", "1", "--nu", "3", "--inside", "--delta", "0.1", "--eta", "0.3", "--alpha", "0.2"],
    );
    assert_eq!(o.status.code(), Some(3));

    let o = reslab(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
}
