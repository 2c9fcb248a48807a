use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lacerec(args: &[&str], config: &Path, out: &Path) -> (i32, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_lacerec"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    (
        output.status.code().unwrap(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn assert_manifest_complete(out: &Path) -> Value {
    let manifest = json(&out.join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
    let mut listed: Vec<&str> = files.iter().map(|f| f["name"].as_str().unwrap()).collect();
    listed.push("manifest.json");
    for entry in fs::read_dir(out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(listed.contains(&name.as_str()), "{name} missing from manifest");
    }
    manifest
}

#[test]
fn kernel_certification_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = lacerec(
        &["certify-kernel"],
        &configs().join("kernel_d1_L1.json"),
        &dir.path().join("a"),
    );
    assert_eq!(code, 1);
    let cert = json(&dir.path().join("a/kernel_certificate.json"));
    let failed: Vec<&Value> = cert["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["name"], "Dbound3");
    assert!((failed[0]["worst_k"][0].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-12);
    let (code, _) = lacerec(
        &["certify-kernel"],
        &configs().join("kernel_d1_L2.json"),
        &dir.path().join("b"),
    );
    assert_eq!(code, 0);
    assert_manifest_complete(&dir.path().join("b"));
}

#[test]
fn missing_kernel_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"model": {"type": "pure_random_walk"}}),
    );
    let out = dir.path().join("out");
    let (code, err) = lacerec(&["run"], &cfg, &out);
    assert_eq!(code, 2, "{err}");
    assert!(!out.exists());
    let cfg = write_config(dir.path(), "bad.json", serde_json::json!({"kernal": {}}));
    assert_eq!(lacerec(&["run"], &cfg, &out).0, 2);
    assert!(!out.exists());
}

#[test]
fn pure_rw_run_writes_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"kernel": {"type": "uniform_box", "d": 2, "L": 1}, "model": {"type": "pure_random_walk"}, "N": 30}),
    );
    let out = dir.path().join("out");
    assert_eq!(lacerec(&["run"], &cfg, &out).0, 0);
    let mut rdr = csv::Reader::from_path(out.join("trace.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (ci, cf) = (col("k_index"), col("f"));
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[ci] == "0" {
            assert_eq!(rec[cf].parse::<f64>().unwrap(), 1.0);
            rows += 1;
        }
    }
    assert_eq!(rows, 31);
    let constants = json(&out.join("constants.json"));
    assert_eq!(constants["constants"]["A"], 1.0);
    assert_eq!(constants["constants"]["v"], 1.0);
    let manifest = assert_manifest_complete(&out);
    assert_eq!(manifest["status"], "passed");
    assert_eq!(manifest["command"], "run");
}

#[test]
fn synthetic_critical_point_agrees_both_ways() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        lacerec(&["critical-point"], &configs().join("synthetic_critical.json"), &out).0,
        0
    );
    let cp = json(&out.join("critical_point.json"));
    assert!(cp["difference"].as_f64().unwrap() < 1e-8, "{cp}");
    let zc = cp["susceptibility_root"]["z_c"].as_f64().unwrap();
    assert!((zc - 0.997983).abs() < 1e-6);
    let along = &cp["zeta_scaling"][0];
    assert_eq!(along["along_sequence"], true);
    assert!(along["fit"]["slope"].as_f64().unwrap() <= 0.0);
}

#[test]
fn small_k3_fails_h3_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(&configs().join("synthetic_certify.json"));
    cfg["induction"]["K3"] = serde_json::json!(0.01);
    cfg["N"] = serde_json::json!(60);
    let cfg = write_config(dir.path(), "c.json", cfg);
    let out = dir.path().join("out");
    assert_eq!(lacerec(&["certify-induction"], &cfg, &out).0, 1);
    let cert = json(&out.join("certificate.json"));
    assert_eq!(cert["passed"], false);
    let h3: u64 = ["H3.r0", "H3.dr", "H3.fs"]
        .iter()
        .map(|f| cert["families"][f]["failures"].as_u64().unwrap_or(0))
        .sum();
    assert!(h3 > 0);
    let manifest = assert_manifest_complete(&out);
    assert_eq!(manifest["status"], "certification_failed");

    // --fit reports constants instead of failing.
    let fit_out = dir.path().join("fit");
    assert_eq!(lacerec(&["certify-induction", "--fit"], &cfg, &fit_out).0, 0);
    assert!(json(&fit_out.join("certificate.json"))["fitted"].is_object());
}

#[test]
fn norms_ordering_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(lacerec(&["norms"], &configs().join("pure_rw_d2.json"), &out).0, 0);
    let mut by_n = std::collections::BTreeMap::<u64, [f64; 2]>::new();
    for rec in csv::Reader::from_path(out.join("norms.csv")).unwrap().records() {
        let rec = rec.unwrap();
        let p: f64 = rec[1].parse().unwrap();
        by_n.entry(rec[0].parse().unwrap()).or_default()[(p as usize) - 1] = rec[2].parse().unwrap();
    }
    assert_eq!(by_n.len(), 201);
    // Normalized measure: the norm is nondecreasing in p.
    for (n, [p1, p2]) in &by_n {
        assert!(p1 <= p2, "n={n}: {p1} > {p2}");
    }
    let fits = json(&out.join("norms.json"));
    let p1 = fits["fits"][0]["decay_exponent"].as_f64().unwrap();
    assert!((p1 + 1.0).abs() <= 0.1, "{p1}");
}

#[test]
fn high_dimension_uses_seeded_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("pure_rw_d8_norms.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(lacerec(&["norms"], &cfg, &a).0, 0);
    assert_eq!(lacerec(&["norms"], &cfg, &b).0, 0);
    let manifest = assert_manifest_complete(&a);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["quadrature"], "monte_carlo");
    assert_eq!(
        fs::read(a.join("norms.csv")).unwrap(),
        fs::read(b.join("norms.csv")).unwrap()
    );

    let c = dir.path().join("c");
    let (code, _) = Command::new(env!("CARGO_BIN_EXE_lacerec"))
        .args(["norms", "--seed", "8", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&c)
        .output()
        .map(|o| (o.status.code().unwrap(), ()))
        .unwrap();
    assert_eq!(code, 0);
    assert_eq!(json(&c.join("manifest.json"))["seed"], 8);
    assert_ne!(
        fs::read(a.join("norms.csv")).unwrap(),
        fs::read(c.join("norms.csv")).unwrap()
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("synthetic_certify.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(lacerec(&["run"], &cfg, &a).0, 0);
    assert_eq!(lacerec(&["run"], &cfg, &b).0, 0);
    let names: Vec<String> = json(&a.join("manifest.json"))["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap().to_owned())
        .collect();
    assert!(names.contains(&"certificate.json".to_owned()));
    for name in names.iter().map(String::as_str).chain(["manifest.json"]) {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}
