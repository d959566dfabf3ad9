use surfdepth::completion::{ablation_trace, ABLATION_STEPS};
use surfdepth::dataset_io::*;
use surfdepth::synthscene::*;
use surfdepth::*;

fn front_plane_scene(tilt: Vec3) -> (SceneSpec, CameraIntrinsics) {
    let intr = CameraIntrinsics::new(300.0, 300.0, 160.0, 60.0, 320, 120).unwrap();
    let spec = SceneSpec {
        surfaces: vec![Surface::plane(Vec3::new(0.0, 0.0, 12.0), tilt.normalize())],
        lidar_pose: lidar_at(Vec3::new(0.1, -0.05, 0.0)),
        camera_pose: RigidTransform::identity(),
        pattern: covering_pattern(&intr, 64, 0.2),
        range_jitter: 0.0,
        seed: 3,
    };
    (spec, intr)
}

#[test]
fn tilted_plane_is_recovered_almost_everywhere() {
    let (spec, intr) = front_plane_scene(Vec3::new(0.3, -0.2, -1.0));
    let scan = render_scan(&spec).unwrap().scan;
    let cfg = PipelineConfig::default();
    let truth = render_truth(&spec, &intr, &RigidTransform::identity(), cfg.max_range).unwrap();
    let c = complete(&scan, &spec.extrinsics(), &intr, &cfg).unwrap();
    assert!(c.mask.removed.is_empty());
    let r = metrics(&c.dense, &truth.to_sparse()).unwrap();
    assert_eq!(r.density, 1.0);
    assert!(r.mae < 20.0, "{r:?}");
}

#[test]
fn residual_beats_nearest_value_on_tilted_plane() {
    let (spec, intr) = front_plane_scene(Vec3::new(0.5, 0.0, -1.0));
    let scan = render_scan(&spec).unwrap().scan;
    let cfg = PipelineConfig {
        smooth_kernel: 1,
        ..PipelineConfig::default()
    };
    let gt = render_truth(&spec, &intr, &RigidTransform::identity(), cfg.max_range)
        .unwrap()
        .to_sparse();
    let s = run_pipeline(&scan, &spec.extrinsics(), &intr, &cfg).unwrap();
    let nearest = metrics(&s.initial, &gt).unwrap();
    let corrected = metrics(&s.corrected, &gt).unwrap();
    assert!(
        corrected.mae < nearest.mae && corrected.rmse < nearest.rmse,
        "{corrected:?} vs {nearest:?}"
    );
}

#[test]
fn ablation_trace_has_every_step() {
    let mut scene = SceneFile::example();
    scene.lidar = covering_pattern(&scene.camera, 64, 0.2);
    let spec = scene.frame(0).unwrap();
    let cfg = PipelineConfig::default();
    let gt = render_truth(&spec, &scene.camera, &spec.camera_pose, cfg.max_range)
        .unwrap()
        .to_sparse();
    let rows = ablation_trace(&render_scan(&spec).unwrap().scan, &spec.extrinsics(), &scene.camera, &cfg, &gt).unwrap();
    assert_eq!(rows.len(), ABLATION_STEPS.len());
    assert!(rows[0].report.rmse > rows[1].report.rmse);
    assert!(rows[1].report.density < 1.0);
    assert!(rows[2..].iter().all(|r| r.report.density == 1.0));
}

#[test]
fn files_on_disk_reproduce_the_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (spec, intr) = front_plane_scene(Vec3::new(-0.2, 0.1, -1.0));
    let scan = render_scan(&spec).unwrap().scan;
    let extr = spec.extrinsics();
    let cfg = PipelineConfig::default();

    write_lidar_bin(&scan, &dir.join("0.bin")).unwrap();
    write_calibration(&intr, &extr, &dir.join("cam.txt"), &dir.join("velo.txt")).unwrap();
    let opts = CalibOptions {
        image_size: Some((intr.width, intr.height)),
        ..CalibOptions::default()
    };
    let (intr2, extr2) = read_calibration(&dir.join("cam.txt"), &dir.join("velo.txt"), &opts).unwrap();
    let scan2 = read_lidar_bin(&dir.join("0.bin")).unwrap().with_elevation_lines(64).unwrap();

    let direct = complete(&scan, &extr, &intr, &cfg).unwrap().dense;
    let loaded = complete(&scan2, &extr2, &intr2, &cfg).unwrap().dense;
    let diff = direct
        .depth
        .iter()
        .zip(&loaded.depth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-3, "max difference {diff} m");

    write_depth_png(&loaded, &dir.join("0.png")).unwrap();
    let back = read_depth_png(&dir.join("0.png")).unwrap();
    for (a, b) in loaded.depth.iter().zip(&back.depth) {
        assert!((a - b.unwrap()).abs() <= 0.5 / 256.0 + 1e-12);
    }
}

#[test]
fn scene_without_hits_is_an_error() {
    let (mut spec, intr) = front_plane_scene(Vec3::new(0.0, 0.0, -1.0));
    spec.surfaces = vec![Surface::plane(Vec3::new(0.0, 0.0, -5.0), Vec3::z())];
    let scan = render_scan(&spec);
    if let Ok(r) = scan {
        assert!(complete(&r.scan, &spec.extrinsics(), &intr, &PipelineConfig::default()).is_err());
    }
}
