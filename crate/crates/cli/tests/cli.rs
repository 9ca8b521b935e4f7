use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use hocle_core::fields_io::sha256_hex;
use serde_json::Value;

fn hocle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hocle")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn files_on_disk(root: &Path, dir: &Path, out: &mut BTreeSet<String>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files_on_disk(root, &p, out);
        } else {
            out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
        }
    }
}

/// Every written file is listed with a matching hash, and nothing else is.
fn assert_inventory(dir: &Path) -> Value {
    let man = manifest(dir);
    let mut listed = BTreeSet::new();
    for f in man["files"].as_array().unwrap() {
        let rel = f["path"].as_str().unwrap();
        let bytes = std::fs::read(dir.join(rel)).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes), "{rel}");
        listed.insert(rel.to_string());
    }
    let mut disk = BTreeSet::new();
    files_on_disk(dir, dir, &mut disk);
    disk.remove("manifest.json");
    assert_eq!(listed, disk);
    man
}

#[test]
fn elliptic_run_records_config_and_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ell");
    let o = hocle(&["elliptic", "--out-dir", out.to_str().unwrap(), "--mesh-ladder", "4,8", "--degree", "1,2", "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let man = assert_inventory(&out);
    assert_eq!(man["subcommand"], "elliptic");
    assert_eq!(man["config"]["elliptic"]["mesh_ladder"], serde_json::json!([4, 8]));
    assert_eq!(man["config"]["elliptic"]["degrees"], serde_json::json!([1, 2]));
    assert_eq!(man["config"]["threads"], 2);
    assert!(man["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let ind = std::fs::read_to_string(out.join("indicators.csv")).unwrap();
    assert_eq!(ind.lines().filter(|l| !l.is_empty()).count(), 1 + 4);

    // the recorded configuration reproduces the run
    let cfg = tmp.path().join("again.toml");
    let mut t = String::from("[elliptic]\n");
    t.push_str(&format!("problem = {}\n", man["config"]["elliptic"]["problem"]));
    t.push_str("degrees = [1, 2]\nmesh_ladder = [4, 8]\n");
    std::fs::write(&cfg, t).unwrap();
    let out2 = tmp.path().join("ell2");
    let o = hocle(&["elliptic", "--config", cfg.to_str().unwrap(), "--out-dir", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("indicators.csv")).unwrap(), std::fs::read(out2.join("indicators.csv")).unwrap());
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[hyperbolic]\ncfl = 0.5\nstep_count = 10\n").unwrap();
    let o = hocle(&["hyperbolic", "--config", cfg.to_str().unwrap(), "--out-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step_count"), "{}", stderr(&o));
}

#[test]
fn missing_raster_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hocle(&[
        "elliptic",
        "--problem",
        "spe10",
        "--medium",
        "raster:/nonexistent/perm.txt",
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/perm.txt"), "{}", stderr(&o));
}

#[test]
fn bad_override_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("o");
    let o = hocle(&["hyperbolic", "--cfl", "1.5", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hyperbolic.cfl"), "{}", stderr(&o));
    let o = hocle(&["coupled", "--medium", "marble", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = hocle(&["hyperbolic", "--problem", "kdv", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn burgers_run_writes_frames_and_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("burgers");
    let o = hocle(&["hyperbolic", "--problem", "burgers", "--mesh-ladder", "16,32", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_inventory(&out);
    for n in [16, 32] {
        assert!(out.join(format!("n{n}/u_final.vtk")).is_file());
        assert!(out.join(format!("n{n}/u_t0.000000.csv")).is_file());
    }
    let sc = std::fs::read_to_string(out.join("self_convergence.csv")).unwrap();
    assert!(sc.lines().count() >= 2);
}

#[test]
fn coupled_run_conserves_mass_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("slab");
    let o = hocle(&["coupled", "--mesh-ladder", "32,16", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let man = assert_inventory(&out);
    let checks = man["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"].as_str().unwrap().contains("mass")));
    assert!(out.join("mass_error.csv").is_file());
    assert!(out.join("l1_differences.csv").is_file());

    let rep = tmp.path().join("rep");
    let o = hocle(&["report", out.to_str().unwrap(), "--out-dir", rep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = std::fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.contains("## summary.csv"));
    assert!(md.contains("| "));

    // a modified output no longer matches its manifest
    let f = out.join("summary.csv");
    let mut s = std::fs::read_to_string(&f).unwrap();
    s.push_str("tampered\n");
    std::fs::write(&f, s).unwrap();
    let o = hocle(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("summary.csv"));
}
