use std::path::Path;

use surfdepth::dataset_io::read_depth_png;
use surfdepth::synthscene::{covering_pattern, SceneFile};
use surfdepth_cli::main_with_args;

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["surfdepth"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn count(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

/// Five 64-line frames of the example scene under `root`.
fn synth(root: &Path) {
    let mut scene = SceneFile::example();
    scene.frames = 5;
    scene.lidar = covering_pattern(&scene.camera, 64, 0.2);
    let file = root.join("scene.toml");
    std::fs::write(&file, scene.to_toml_string()).unwrap();
    assert_eq!(run(&["synth", "--input", p(&file), "--out", p(root)]), 0);
}

#[test]
fn complete_writes_one_png_per_frame_and_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    let out = root.join("dense");
    let masks = root.join("masks");
    let code = run(&[
        "complete",
        "--input",
        p(&root.join("velodyne")),
        "--calib",
        p(&root.join("calib")),
        "--out",
        p(&out),
        "--mask-out",
        p(&masks),
        "--gt",
        p(&root.join("groundtruth")),
    ]);
    assert_eq!(code, 0);
    assert_eq!(count(&out, "png"), 5);
    assert_eq!(count(&masks, "png"), 5);

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let frames = manifest["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 5);
    assert!(frames.iter().all(|f| f["wall_ms"].as_f64().unwrap() > 0.0 && f["error"].is_null()));
    assert_eq!(manifest["config"]["epsilon"].as_f64(), Some(1.0));

    let dense = read_depth_png(&out.join("000000.png")).unwrap();
    assert_eq!(dense.count(), dense.width * dense.height);
    let mae = manifest["aggregate"]["mae"].as_f64().unwrap();
    assert!(mae < 1000.0, "mae {mae} mm");
    assert_eq!(manifest["aggregate"]["density"].as_f64(), Some(1.0));
}

#[test]
fn evaluating_truth_against_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    let gt = root.join("groundtruth");
    let report = root.join("report");
    assert_eq!(run(&["evaluate", "--input", p(&gt), "--gt", p(&gt), "--out", p(&report)]), 0);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("manifest.json")).unwrap()).unwrap();
    for key in ["rmse", "mae", "irmse", "imae"] {
        assert_eq!(manifest["aggregate"][key].as_f64(), Some(0.0), "{key}");
    }
    assert!(report.join("report.csv").is_file());
}

#[test]
fn mismatched_frame_sets_are_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    let gt = root.join("groundtruth");
    let partial = root.join("partial");
    std::fs::create_dir(&partial).unwrap();
    std::fs::copy(gt.join("000001.png"), partial.join("000001.png")).unwrap();
    std::fs::copy(gt.join("000001.png"), partial.join("999999.png")).unwrap();
    assert_eq!(run(&["evaluate", "--input", p(&partial), "--gt", p(&gt)]), 2);
}

#[test]
fn sparsified_scans_still_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    let sparse = root.join("velodyne16");
    assert_eq!(
        run(&[
            "sparsify",
            "--input",
            p(&root.join("velodyne")),
            "--lines",
            "16",
            "--out",
            p(&sparse)
        ]),
        0
    );
    assert_eq!(count(&sparse, "bin"), 5);
    let full = std::fs::metadata(root.join("velodyne/000000.bin")).unwrap().len();
    let kept = std::fs::metadata(sparse.join("000000.bin")).unwrap().len();
    assert!(kept * 3 < full && kept * 5 > full, "{kept} of {full} bytes");

    let out = root.join("dense16");
    let code = run(&[
        "complete",
        "--input",
        p(&sparse),
        "--calib",
        p(&root.join("calib")),
        "--out",
        p(&out),
        "--lines",
        "16",
    ]);
    assert_eq!(code, 0);
    for k in 0..5 {
        let dense = read_depth_png(&out.join(format!("{k:06}.png"))).unwrap();
        assert_eq!(dense.count(), dense.width * dense.height);
    }
}

#[test]
fn missing_calibration_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    std::fs::remove_file(root.join("calib").join(surfdepth_cli::frames::LIDAR_CALIB)).unwrap();
    let out = root.join("dense");
    let code = run(&[
        "complete",
        "--input",
        p(&root.join("velodyne")),
        "--calib",
        p(&root.join("calib")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn ablation_reaches_full_density_after_the_transform() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    let out = root.join("ablation");
    let code = run(&[
        "ablate",
        "--input",
        p(&root.join("velodyne")),
        "--calib",
        p(&root.join("calib")),
        "--gt",
        p(&root.join("groundtruth")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let rows = manifest["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2]["step"], "+ distance transform");
    for row in &rows[2..] {
        assert_eq!(row["report"]["density"].as_f64(), Some(1.0));
    }
    assert!(rows[1]["report"]["density"].as_f64().unwrap() < 1.0);
}

#[test]
fn render_and_stats_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    synth(root);
    let renders = root.join("renders");
    assert_eq!(run(&["render", "--input", p(&root.join("groundtruth")), "--out", p(&renders)]), 0);
    assert_eq!(count(&renders, "png"), 5);
    let normals = root.join("normals");
    let code = run(&[
        "render",
        "--input",
        p(&root.join("velodyne")),
        "--mode",
        "normal",
        "--calib",
        p(&root.join("calib")),
        "--out",
        p(&normals),
    ]);
    assert_eq!(code, 0);
    assert_eq!(count(&normals, "png"), 5);
    let code = run(&[
        "stats",
        "--input",
        p(&root.join("velodyne")),
        "--calib",
        p(&root.join("calib")),
        "--gt",
        p(&root.join("groundtruth")),
    ]);
    assert_eq!(code, 0);
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(run(&["sparsify", "--input", "x", "--lines", "8", "--out", "y"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}
