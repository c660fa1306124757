use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_desirelines"))
}

fn spec_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/three_designs.json")
}

fn exec(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("synth");
    let o = exec(
        bin()
            .arg("synth")
            .arg("--config")
            .arg(spec_path())
            .arg("--out")
            .arg(&out)
            .args(extra),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn run_cmd(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    exec(
        bin()
            .arg(sub)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(out)
            .args(extra),
    )
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_then_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let input = synth(tmp.path(), &[]);
    for f in [
        "trajectories.csv",
        "scene.json",
        "ground_truth.csv",
        "config.json",
    ] {
        assert!(input.join(f).exists(), "{f}");
    }
    let out = tmp.path().join("out");
    let o = run_cmd("run", &input.join("config.json"), &out, &["--threads", "2"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("(10.00%)"));
    for f in [
        "discards.csv",
        "sd_assignments_raw.csv",
        "sd_clusters_raw.json",
        "sd_assignments.csv",
        "path_assignments.csv",
        "trajectories_detail.csv",
        "report.json",
        "report.txt",
        "manifest.json",
        "overlay.geojson",
        "figures/sd_0.svg",
        "figures/durations_sd_0.svg",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let sd: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("sd_clusters.json")).unwrap()).unwrap();
    for c in sd.as_array().unwrap() {
        let label = c["label"].as_u64().unwrap();
        let svg = fs::read_to_string(out.join(format!("figures/sd_{label}.svg"))).unwrap();
        let members = c["member_ids"].as_array().unwrap().len();
        assert_eq!(svg.matches("<polyline class=\"traj\"").count(), members);
    }
}

#[test]
fn stages_write_their_own_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), &[]).join("config.json");
    let ep = tmp.path().join("ep");
    assert!(run_cmd("cluster-endpoints", &cfg, &ep, &[])
        .status
        .success());
    assert!(ep.join("sd_assignments.csv").exists());
    assert!(!ep.join("path_assignments.csv").exists());
    let paths = tmp.path().join("paths");
    assert!(
        run_cmd("cluster-paths", &cfg, &paths, &["--dump-distances"])
            .status
            .success()
    );
    assert!(paths.join("path_assignments.csv").exists());
    assert!(paths.join("distances/sd_0.txt").exists());
    assert!(!paths.join("report.json").exists());
    let report = tmp.path().join("report");
    assert!(run_cmd("report", &cfg, &report, &[]).status.success());
    assert!(report.join("report.json").exists());
    assert!(!report.join("figures").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), &[]).join("config.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_cmd("run", &cfg, &a, &["--threads", "1"])
        .status
        .success());
    assert!(run_cmd("run", &cfg, &b, &["--threads", "4"])
        .status
        .success());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn flag_overrides_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), &[]).join("config.json");
    let out = tmp.path().join("out");
    let o = run_cmd(
        "report",
        &cfg,
        &out,
        &[
            "--target-count",
            "1",
            "--tau",
            "20",
            "--mode",
            "per-trajectory",
            "--linkage",
            "complete",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["path_cluster"]["cut"]["target_count"], 1);
    assert_eq!(m["path_cluster"]["linkage"], "complete");
    assert_eq!(m["compliance"]["deviation_threshold"], 20.0);
    assert_eq!(m["compliance"]["mode"], "per_trajectory");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["path_clusters"].as_array().unwrap().len(), 3);
}

#[test]
fn sparse_scene_has_no_clusters_and_no_figures() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec: serde_json::Value =
        serde_json::from_slice(&fs::read(spec_path()).unwrap()).unwrap();
    for b in spec["bundles"].as_array_mut().unwrap() {
        b["count"] = 3.into();
    }
    let spec_file = tmp.path().join("sparse.json");
    fs::write(&spec_file, spec.to_string()).unwrap();
    let input = tmp.path().join("in");
    assert!(exec(
        bin()
            .arg("synth")
            .arg("--config")
            .arg(&spec_file)
            .arg("--out")
            .arg(&input)
    )
    .status
    .success());
    let out = tmp.path().join("out");
    let o = run_cmd("run", &input.join("config.json"), &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(fs::read_dir(out.join("figures")).unwrap().count(), 0);
    let discards = fs::read_to_string(out.join("discards.csv")).unwrap();
    assert_eq!(
        discards
            .lines()
            .filter(|l| l.ends_with(",dbscan_noise"))
            .count(),
        12
    );
}

#[test]
fn input_problems_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(
        run_cmd("run", &tmp.path().join("missing.json"), &out, &[])
            .status
            .code(),
        Some(1)
    );

    let input = synth(tmp.path(), &[]);
    let bad_cfg = tmp.path().join("bad.json");
    fs::write(
        &bad_cfg,
        r#"{"trajectories": "x.csv", "scene": "y.json", "colour": 3}"#,
    )
    .unwrap();
    assert_eq!(run_cmd("run", &bad_cfg, &out, &[]).status.code(), Some(1));

    let scene = fs::read_to_string(input.join("scene.json")).unwrap();
    fs::write(
        input.join("scene.json"),
        scene.replacen("\"N_out\"", "\"Nowhere\"", 1),
    )
    .unwrap();
    let o = run_cmd("run", &input.join("config.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));

    assert_eq!(
        run_cmd("run", &input.join("config.json"), &out, &["--eps", "-1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        exec(bin().arg("run").arg("--out").arg(&out)).status.code(),
        Some(1)
    );
    assert_eq!(exec(bin().arg("frobnicate")).status.code(), Some(1));
}

#[test]
fn synth_seed_override_changes_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), &[]);
    let b = synth(&tmp.path().join("b"), &["--seed", "99"]);
    let c = synth(&tmp.path().join("c"), &[]);
    let read = |p: &Path| fs::read(p.join("trajectories.csv")).unwrap();
    assert_eq!(read(&a), read(&c));
    assert_ne!(read(&a), read(&b));
}
