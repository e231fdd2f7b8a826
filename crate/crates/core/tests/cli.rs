use std::path::Path;
use std::process::{Command, Output};

use gpsm::pointcloud::{load_ply, save_gray16_png, save_ply, Image, LabeledPointCloud};
use gpsm::ClassSet;

fn gpsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpsm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn som_build_and_tree_export_on_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cloud = LabeledPointCloud::with_labels(
        vec![[0.51, 0.01, 1.01], [-0.49, 0.21, 1.51], [0.01, -0.39, 2.01]],
        vec![Some(1), Some(2), Some(1)],
    )
    .unwrap();
    save_ply(&cloud, d.join("in.ply")).unwrap();
    ClassSet::numbered(2)
        .unwrap()
        .save(d.join("classes.json"))
        .unwrap();
    let out = d.join("out");
    let run = gpsm(&[
        "build",
        "--input",
        s(&d.join("in.ply")),
        "--class-set",
        s(&d.join("classes.json")),
        "--method",
        "som",
        "--output-dir",
        s(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(summary["som_occupied_leaves"], 3);

    let ply = d.join("tree.ply");
    let export = gpsm(&[
        "export",
        "tree",
        "--tree",
        s(&out.join("som_tree.bin")),
        "--class-set",
        s(&out.join("class_set.json")),
        "--output",
        s(&ply),
    ]);
    assert!(
        export.status.success(),
        "{}",
        String::from_utf8_lossy(&export.stderr)
    );
    let leaves = load_ply(&ply).unwrap();
    assert_eq!(leaves.len(), 3);
    let mut labels: Vec<_> = leaves.labels().to_vec();
    labels.sort();
    assert_eq!(labels, vec![Some(1), Some(1), Some(2)]);
}

#[test]
fn build_with_evaluation_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("room");
    let run = gpsm(&[
        "build",
        "--synthetic-room",
        "3",
        "--downsample",
        "6",
        "--max-train-points",
        "300",
        "--num-inducing",
        "40",
        "--evaluate",
        "--roc-csv",
        "--output-dir",
        s(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    for f in [
        "gpsm_model.bin",
        "gpsm_prediction.ply",
        "som_tree.bin",
        "eval_report.json",
        "run_summary.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let eval = gpsm(&[
        "eval",
        "--synthetic-room",
        "3",
        "--downsample",
        "6",
        "--max-train-points",
        "300",
        "--num-inducing",
        "40",
        "--output-dir",
        s(&out),
    ]);
    assert!(eval.status.success());
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(report["gpsm"]["total_auc"].as_f64().unwrap() > 0.5);
}

#[test]
fn toy2d_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = gpsm(&["toy2d", "--output-dir", s(dir.path()), "--seed", "2"]);
    assert!(run.status.success());
    let grid = std::fs::read_to_string(dir.path().join("toy2d_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 101 * 101 + 1);
    assert!(grid.starts_with("x,y,log_p1,log_p2,log_p3,label"));
}

#[test]
fn rgbd_export_back_projects_valid_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let depth = Image::from_fn(8, 6, |u, _| if u == 0 { 0 } else { 1500 });
    let labels = Image::from_fn(8, 6, |_, v| (v % 3) as u16);
    save_gray16_png(&depth, d.join("depth.png")).unwrap();
    save_gray16_png(&labels, d.join("labels.png")).unwrap();
    std::fs::write(
        d.join("intr.json"),
        r#"{"fx": 5.0, "fy": 5.0, "cx": 3.5, "cy": 2.5, "width": 8, "height": 6, "depth_scale": 0.001}"#,
    )
    .unwrap();
    let ply = d.join("frame.ply");
    let run = gpsm(&[
        "export",
        "rgbd",
        "--depth",
        s(&d.join("depth.png")),
        "--labels",
        s(&d.join("labels.png")),
        "--intrinsics",
        s(&d.join("intr.json")),
        "--output",
        s(&ply),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let cloud = load_ply(&ply).unwrap();
    assert_eq!(cloud.len(), 7 * 6);
    assert!(cloud.points().iter().all(|p| (p[2] - 1.5).abs() < 1e-6));
    // Label 0 marks unlabeled pixels.
    assert_eq!(cloud.labeled_count(), 7 * 4);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = gpsm(&["build", "--config", s(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("config"));

    let bad_range = gpsm(&[
        "build",
        "--label-noise",
        "1.5",
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(bad_range.status.code(), Some(2));

    let no_artifacts = gpsm(&["eval", "--output-dir", s(&dir.path().join("empty"))]);
    assert_eq!(no_artifacts.status.code(), Some(3));

    std::fs::write(
        dir.path().join("classes.json"),
        r#"{"classes":[{"id":1,"name":"a","color":[0,0,0]},{"id":2,"name":"b","color":[1,1,1]}]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("garbage.ply"),
        b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n",
    )
    .unwrap();
    let bad_ply = gpsm(&[
        "build",
        "--input",
        s(&dir.path().join("garbage.ply")),
        "--class-set",
        s(&dir.path().join("classes.json")),
        "--output-dir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(bad_ply.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad_ply.stderr).contains("load"));

    assert!(!gpsm(&["frobnicate"]).status.success());
}
