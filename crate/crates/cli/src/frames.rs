//! Frame discovery and pairing across directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use surfdepth::dataset_io::{read_calibration, CalibOptions};
use surfdepth::{CameraIntrinsics, RigidTransform};

pub const CAM_CALIB: &str = "calib_cam_to_cam.txt";
pub const LIDAR_CALIB: &str = "calib_velo_to_cam.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub stem: String,
    pub path: PathBuf,
}

/// Files with extension `ext` under `input`, sorted by stem. A single
/// file is accepted as a one-frame set.
pub fn list_frames(input: &Path, ext: &str) -> Result<Vec<Frame>> {
    let as_frame = |path: PathBuf| {
        let stem = path.file_stem()?.to_str()?.to_string();
        Some(Frame { stem, path })
    };
    if input.is_file() {
        return Ok(as_frame(input.to_path_buf()).into_iter().collect());
    }
    let entries = std::fs::read_dir(input).with_context(|| format!("cannot read input directory {}", input.display()))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            frames.extend(as_frame(path));
        }
    }
    frames.sort_by(|a, b| a.stem.cmp(&b.stem));
    if frames.is_empty() {
        bail!("no .{ext} files in {}", input.display());
    }
    Ok(frames)
}

/// Frames of `a` and `b` matched by stem. Any stem present on one side only
/// is an error naming both differences.
pub fn pair_frames(a: Vec<Frame>, b: Vec<Frame>, a_name: &str, b_name: &str) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut left: BTreeMap<String, PathBuf> = a.into_iter().map(|f| (f.stem, f.path)).collect();
    let right: BTreeMap<String, PathBuf> = b.into_iter().map(|f| (f.stem, f.path)).collect();
    let only_a: Vec<&String> = left.keys().filter(|k| !right.contains_key(*k)).collect();
    let only_b: Vec<&String> = right.keys().filter(|k| !left.contains_key(*k)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        bail!("frame sets differ: only in {a_name}: {only_a:?}; only in {b_name}: {only_b:?}");
    }
    Ok(right
        .into_iter()
        .map(|(stem, pb)| {
            let pa = left.remove(&stem).expect("paired");
            (stem, pa, pb)
        })
        .collect())
}

/// Calibration from a directory holding the camera and LiDAR files.
pub fn load_calibration(dir: &Path) -> Result<(CameraIntrinsics, RigidTransform)> {
    let cam = dir.join(CAM_CALIB);
    let lidar = dir.join(LIDAR_CALIB);
    for f in [&cam, &lidar] {
        if !f.is_file() {
            bail!("calibration file {} not found", f.display());
        }
    }
    Ok(read_calibration(&cam, &lidar, &CalibOptions::default())?)
}
