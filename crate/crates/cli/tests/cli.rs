use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn signchange(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signchange"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_with_defaults_gives_two_nodal_domains() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = signchange(&["full", "--out", out.to_str().unwrap(), "--no-timings"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["passed"], true);
    assert_eq!(r["assembly"]["status"], "done");
    assert_eq!(r["assembly"]["value"]["nodal_domains"], 2);
    assert_eq!(r["config"]["m"], 1);
    assert!(r["timings"].is_null());

    // every emitted file is in the manifest with a matching checksum
    let manifest = r["manifest"].as_array().unwrap();
    let mut listed: Vec<&str> = manifest.iter().map(|e| e["file"].as_str().unwrap()).collect();
    for e in manifest {
        let bytes = fs::read(out.join(e["file"].as_str().unwrap())).unwrap();
        assert_eq!(e["bytes"].as_u64().unwrap() as usize, bytes.len());
        let digest: String = {
            use sha2::{Digest, Sha256};
            Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
        };
        assert_eq!(e["sha256"], digest.as_str());
    }
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "report.json")
        .collect();
    on_disk.sort();
    listed.sort();
    assert_eq!(listed, on_disk);
    for name in ["disk_heatmap.ppm", "disk.vtk", "disk_field.csv", "moser.csv", "path_trace.csv", "sector_field.csv"] {
        assert!(listed.contains(&name), "{name} missing");
    }
}

#[test]
fn moser_limits_writes_one_row_per_n() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "moser.n_list = 100, 10000\n");
    let out = tmp.path().join("out");
    let o = signchange(&["moser-limits", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("moser.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,norm,L1,L2,max_I");
    assert_eq!(lines.len(), 3);
    let r = report(&out);
    assert_eq!(r["solver"]["status"], "skipped");
    assert!(r["timings"].is_array());
}

#[test]
fn zero_model_surfaces_no_ridge() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "nonlinearity.model = zero\nmesh.h = 0.05\n");
    let out = tmp.path().join("out");
    let o = signchange(&["solve-sector", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("solve-sector: no ridge"), "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["passed"], false);
    assert_eq!(r["solver"]["status"], "failed");
    assert_eq!(r["errors"][0]["stage"], "solve-sector");
}

#[test]
fn config_errors_carry_the_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "# sectors\nm = 0\n");
    let o = signchange(&["full", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "solver.tolerance = 1e-6\n");
    let o = signchange(&["full", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key"), "{}", stderr(&o));
}

#[test]
fn output_dir_may_come_from_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("from-config");
    let cfg = write_config(tmp.path(), &format!("output.dir = {}\n", target.display()));
    let o = signchange(&["check-hypotheses", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(report(&target)["hypotheses"]["status"], "done");

    let o = signchange(&["check-hypotheses"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cubic_model_fails_only_the_strict_growth_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "nonlinearity.model = cubic\n");
    let out = tmp.path().join("out");
    let o = signchange(&["check-hypotheses", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let h = &report(&out)["hypotheses"]["value"];
    assert_eq!(h["f1_strict"]["status"], "fail");
    assert_ne!(h["f1_critical"]["status"], "fail");
}
