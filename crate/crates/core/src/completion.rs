//! Depth completion from local surface geometry.
//!
//! An empty pixel `(μ, ν)` is assumed to lie on the same surface as its
//! nearest measured pixel `(μ + Δμ, ν + Δν)` with depth `z'` and normal `n`.
//! Back-projecting both through the pinhole model and requiring the
//! difference to be orthogonal to `n` gives `z = z' + Δz` with
//!
//! ```text
//!        (z'·Δμ/f_u, z'·Δν/f_v, 0) · n
//! Δz = ----------------------------------
//!      ((μ - p_u)/f_u, (ν - p_v)/f_v, 1) · n
//! ```
//!
//! which is exact for planar surfaces.
//!
//! The pipeline runs four steps: normals on the spherical range image and
//! projection into the camera, outlier removal, the nearest-seed transform,
//! then the residual correction followed by Gaussian smoothing.

use crate::config::PipelineConfig;
use crate::dt::{nearest_field, NearestField};
use crate::error::{Error, Result};
use crate::evaluation::{accumulate, EvalReport};
use crate::geometry::{project_point, project_scan, CameraIntrinsics, DepthGrid, LidarScan, RigidTransform, SparseDepthMap, Vec3};
use crate::normals::{build_range_image, estimate_normals, normals_to_camera, NormalMap};
use crate::outlier::{outlier_points, remove_outliers, OutlierMask, SensorSpec};

/// Fully populated depth image, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DenseDepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::invalid(
                "depth",
                format!("{} cells for a {width}x{height} grid", depth.len()),
            ));
        }
        if let Some(d) = depth.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("depth", format!("{d} is not a positive finite depth")));
        }
        Ok(Self { width, height, depth })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            depth: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }
}

impl DepthGrid for DenseDepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn depth_at(&self, idx: usize) -> Option<f64> {
        Some(self.depth[idx])
    }
}

/// Depth change from the seed `z'` to the pixel at continuous coordinates
/// `(mu, nu)`, where the seed sits at `(mu + d_mu, nu + d_nu)`. Returns 0
/// when the denominator is smaller than `guard` in magnitude.
#[allow(clippy::too_many_arguments)]
pub fn residual(z_seed: f64, d_mu: f64, d_nu: f64, mu: f64, nu: f64, n: &Vec3, intr: &CameraIntrinsics, guard: f64) -> f64 {
    let num = (z_seed * d_mu / intr.fu) * n.x + (z_seed * d_nu / intr.fv) * n.y;
    let den = intr.ray(mu, nu).dot(n);
    if !(den.abs() >= guard) {
        return 0.0;
    }
    let dz = num / den;
    if dz.is_finite() {
        dz
    } else {
        0.0
    }
}

/// Separable Gaussian blur with replicated borders. `kernel` must be odd;
/// a kernel of 1 returns the input unchanged.
pub fn gaussian_smooth(dense: &DenseDepthMap, kernel: usize, sigma: f64) -> Result<DenseDepthMap> {
    if kernel.is_multiple_of(2) {
        return Err(Error::invalid("kernel", format!("{kernel} is not odd")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", format!("{sigma} is not positive")));
    }
    if kernel == 1 {
        return Ok(dense.clone());
    }
    let radius = (kernel / 2) as isize;
    let mut weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let (w, h) = (dense.width as isize, dense.height as isize);
    let mut tmp = vec![0.0; dense.depth.len()];
    for y in 0..h {
        let row = &dense.depth[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in weights.iter().enumerate() {
                let xx = (x + k as isize - radius).clamp(0, w - 1);
                acc += wt * row[xx as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; dense.depth.len()];
    for y in 0..h {
        for (k, wt) in weights.iter().enumerate() {
            let yy = (y + k as isize - radius).clamp(0, h - 1);
            let src = &tmp[(yy * w) as usize..((yy + 1) * w) as usize];
            let dst = &mut out[(y * w) as usize..((y + 1) * w) as usize];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    Ok(DenseDepthMap {
        width: dense.width,
        height: dense.height,
        depth: out,
    })
}

/// Everything the pipeline produces for one frame.
#[derive(Debug, Clone)]
pub struct PipelineStages {
    /// Z-buffered projection of the scan.
    pub raw: SparseDepthMap,
    pub cleaned: SparseDepthMap,
    pub mask: OutlierMask,
    /// Camera-frame normals of the raw projection.
    pub normals: NormalMap,
    pub field: NearestField,
    /// Nearest-seed depth everywhere.
    pub initial: DenseDepthMap,
    /// After the residual correction and clamping.
    pub corrected: DenseDepthMap,
    /// Final output.
    pub smoothed: DenseDepthMap,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub dense: DenseDepthMap,
    pub mask: OutlierMask,
    pub normals: NormalMap,
    pub field: NearestField,
}

/// Normals of every scan point that projects into the image, LiDAR frame.
fn scan_normals(scan: &LidarScan, extrinsics: &RigidTransform, intr: &CameraIntrinsics, cfg: &PipelineConfig) -> Result<Vec<Option<Vec3>>> {
    let in_frame: Vec<usize> = scan
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| project_point(p, extrinsics, intr).is_some_and(|q| q.z <= cfg.max_range))
        .map(|(i, _)| i)
        .collect();
    if in_frame.is_empty() {
        return Err(Error::Empty("no scan point projects into the image".into()));
    }
    let mut out = vec![None; scan.len()];
    let ri = build_range_image(&scan.select(&in_frame), cfg.range_image_cols)?;
    if ri.occupied() < 3 {
        return Ok(out);
    }
    let local = estimate_normals(&ri, &cfg.normal_options())?;
    for (k, n) in in_frame.iter().zip(local) {
        out[*k] = n;
    }
    Ok(out)
}

pub fn run_pipeline(
    scan: &LidarScan,
    extrinsics: &RigidTransform,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<PipelineStages> {
    cfg.validate()?;
    intr.validate()?;
    let lines = scan.num_lines.unwrap_or(cfg.lidar_lines);
    let lined;
    let scan = if scan.line_index.is_some() {
        scan
    } else {
        lined = scan.clone().with_elevation_lines(lines)?;
        &lined
    };

    // Step 1: normals on the range image, then projection into the camera.
    let point_normals = scan_normals(scan, extrinsics, intr, cfg)?;
    let raw = project_scan(scan, extrinsics, intr, cfg.max_range);
    let normals = normals_to_camera(&point_normals, scan, extrinsics, &raw)?;

    // Step 2: outlier removal.
    let (cleaned, mask) = if cfg.outlier_removal {
        let points = outlier_points(&raw, scan, extrinsics, intr)?;
        let spec = SensorSpec::new(intr.width, intr.height, lines, points.len())?;
        remove_outliers(&raw, &points, &spec, cfg.epsilon)?
    } else {
        (raw.clone(), OutlierMask::empty(intr.width, intr.height, raw.count()))
    };
    if cleaned.count() == 0 {
        return Err(Error::Empty("no depth left after outlier removal".into()));
    }

    // Step 3: nearest seed, offset, depth and normal for every pixel.
    let field = nearest_field(&cleaned, &normals, cfg.dt_metric)?;

    // Step 4: residual correction, then smoothing.
    let initial = DenseDepthMap {
        width: intr.width,
        height: intr.height,
        depth: field.seed_depth.clone(),
    };
    let mut corrected = initial.clone();
    for (y, row) in corrected.depth.chunks_mut(intr.width).enumerate() {
        let nu = y as f64 + 0.5;
        for (x, z) in row.iter_mut().enumerate() {
            let idx = y * intr.width + x;
            let Some(n) = field.seed_normal[idx] else { continue };
            let (d_mu, d_nu) = field.offsets[idx];
            if d_mu == 0 && d_nu == 0 {
                continue;
            }
            let mu = x as f64 + 0.5;
            let seed = *z;
            let candidate = seed + residual(seed, d_mu as f64, d_nu as f64, mu, nu, &n, intr, cfg.denom_guard);
            *z = if !(candidate > 0.0) || !candidate.is_finite() {
                seed
            } else {
                candidate.min(cfg.max_range)
            };
        }
    }
    let mut smoothed = gaussian_smooth(&corrected, cfg.smooth_kernel, cfg.smooth_sigma)?;
    if cfg.preserve_seeds {
        for (idx, d) in cleaned.occupied() {
            smoothed.depth[idx] = d;
        }
    }

    Ok(PipelineStages {
        raw,
        cleaned,
        mask,
        normals,
        field,
        initial,
        corrected,
        smoothed,
    })
}

pub fn complete(scan: &LidarScan, extrinsics: &RigidTransform, intr: &CameraIntrinsics, cfg: &PipelineConfig) -> Result<Completion> {
    let s = run_pipeline(scan, extrinsics, intr, cfg)?;
    Ok(Completion {
        dense: s.smoothed,
        mask: s.mask,
        normals: s.normals,
        field: s.field,
    })
}

pub const ABLATION_STEPS: [&str; 5] = [
    "original input",
    "+ outlier removal",
    "+ distance transform",
    "+ residual",
    "+ smooth",
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub step: &'static str,
    pub report: EvalReport,
}

/// Scores every stage of the pipeline against `gt`, one row per step.
pub fn ablation_trace(
    scan: &LidarScan,
    extrinsics: &RigidTransform,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
    gt: &SparseDepthMap,
) -> Result<Vec<AblationRow>> {
    let stages = run_pipeline(scan, extrinsics, intr, cfg)?;
    Ok(stage_accumulators(&stages, gt, cfg.eval_crop_top)?
        .into_iter()
        .zip(ABLATION_STEPS)
        .map(|(acc, step)| AblationRow {
            step,
            report: acc.report(),
        })
        .collect())
}

/// Per-step sums, so that traces of many frames can be merged.
pub fn stage_accumulators(
    stages: &PipelineStages,
    gt: &SparseDepthMap,
    crop_top: usize,
) -> Result<Vec<crate::evaluation::EvalAccumulator>> {
    let total = stages.mask.total as u64;
    let kept = total - stages.mask.removed.len() as u64;
    let grids: [&dyn DepthGrid; 5] = [&stages.raw, &stages.cleaned, &stages.initial, &stages.corrected, &stages.smoothed];
    grids
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let acc = accumulate(*g, gt, crop_top)?;
            Ok(if k == 0 {
                acc.with_keep(total, total)
            } else {
                acc.with_keep(kept, total)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dt::DtMetric;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 380.0, 160.0, 90.0, 320, 180).unwrap()
    }

    fn plane_depth(intr: &CameraIntrinsics, n: &Vec3, d: f64, u: f64, v: f64) -> f64 {
        // Plane n·X = d, ray X = z·ray(u, v).
        d / n.dot(&intr.ray(u, v))
    }

    #[test]
    fn fronto_parallel_has_no_residual() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        for (du, dv) in [(3.0, -2.0), (-7.0, 11.0), (0.5, 0.5)] {
            assert_eq!(residual(6.0, du, dv, 40.0, 20.0, &n, &intr(), 1e-6), 0.0);
        }
    }

    #[test]
    fn zero_offset_has_no_residual() {
        let n = Vec3::new(-0.5, 0.3, -0.8).normalize();
        assert_eq!(residual(6.0, 0.0, 0.0, 40.0, 20.0, &n, &intr(), 1e-6), 0.0);
    }

    #[test]
    fn tilted_plane_is_exact() {
        let i = intr();
        let s = 30f64.to_radians();
        let n = Vec3::new(-s.sin(), 0.0, -s.cos());
        // Plane through (0, 0, 8) with normal n: n·X = n·(0,0,8).
        let d = n.dot(&Vec3::new(0.0, 0.0, 8.0));
        for (u, v, du, dv) in [(10.5, 10.5, 4.0, -3.0), (300.5, 170.5, -9.0, 2.0), (160.5, 90.5, 1.0, 1.0)] {
            let seed = plane_depth(&i, &n, d, u + du, v + dv);
            let truth = plane_depth(&i, &n, d, u, v);
            let z = seed + residual(seed, du, dv, u, v, &n, &i, 1e-6);
            assert!((z - truth).abs() < 1e-9, "{z} vs {truth}");
        }
    }

    proptest! {
        #[test]
        fn guard_never_yields_nan(
            nx in -1.0f64..1.0, ny in -1.0f64..1.0, eps in -1e-7f64..1e-7,
            du in -20i32..20, dv in -20i32..20, u in 0.0f64..320.0, v in 0.0f64..180.0,
        ) {
            // Normal almost orthogonal to the pixel ray.
            let i = intr();
            let ray = i.ray(u, v);
            let t = Vec3::new(nx, ny, 0.3).cross(&ray);
            prop_assume!(t.norm() > 1e-3);
            let n = (t.normalize() + ray.normalize() * eps).normalize();
            let dz = residual(5.0, du as f64, dv as f64, u, v, &n, &i, 1e-6);
            prop_assert!(dz.is_finite());
            if ray.dot(&n).abs() < 1e-6 {
                prop_assert_eq!(dz, 0.0);
            }
        }
    }

    #[test]
    fn smoothing_kernel_one_is_identity() {
        let m = DenseDepthMap::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        assert_eq!(gaussian_smooth(&m, 1, 1.0).unwrap(), m);
        assert!(gaussian_smooth(&m, 4, 1.0).is_err());
    }

    #[test]
    fn smoothing_preserves_constants() {
        let m = DenseDepthMap::constant(17, 9, 12.25);
        let s = gaussian_smooth(&m, 5, 1.3).unwrap();
        assert!(s.depth.iter().all(|d| (d - 12.25).abs() < 1e-12));
    }

    #[test]
    fn smoothing_impulse_matches_kernel() {
        let (w, h) = (21, 21);
        let mut m = DenseDepthMap::constant(w, h, 10.0);
        m.depth[10 * w + 10] = 11.0;
        let (kernel, sigma) = (5usize, 1.0f64);
        let s = gaussian_smooth(&m, kernel, sigma).unwrap();
        // Direct 2D evaluation of the normalized kernel.
        let r = (kernel / 2) as i64;
        let g = |k: i64| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-r..=r).map(g).sum::<f64>().powi(2);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (dx, dy) = (x - 10, y - 10);
                let expected = if dx.abs() <= r && dy.abs() <= r {
                    10.0 + g(dx) * g(dy) / norm
                } else {
                    10.0
                };
                assert!((s.depth[(y * w as i64 + x) as usize] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dense_map_validation() {
        assert!(DenseDepthMap::new(2, 1, vec![1.0]).is_err());
        assert!(DenseDepthMap::new(2, 1, vec![1.0, 0.0]).is_err());
        assert!(DenseDepthMap::new(2, 1, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn seed_pixels_keep_their_depth_before_smoothing() {
        // A handful of camera-frame points on a tilted plane.
        let i = intr();
        let n = Vec3::new(0.2, -0.1, -1.0).normalize();
        let d = n.dot(&Vec3::new(0.0, 0.0, 9.0));
        let mut pts = Vec::new();
        for k in 0..400 {
            let (u, v) = ((k % 20) as f64 * 16.0 + 3.3, (k / 20) as f64 * 9.0 + 2.7);
            pts.push(i.ray(u, v) * plane_depth(&i, &n, d, u, v));
        }
        let scan = LidarScan::unordered(pts).unwrap();
        let cfg = PipelineConfig {
            lidar_lines: 20,
            range_image_cols: 20,
            smooth_kernel: 1,
            ..Default::default()
        };
        // Points are already in the camera frame.
        let st = run_pipeline(&scan, &RigidTransform::identity(), &i, &cfg).unwrap();
        for (idx, z) in st.cleaned.occupied() {
            assert_eq!(st.corrected.depth[idx], z);
            assert_eq!(st.smoothed.depth[idx], z);
        }
        assert_eq!(st.field.metric, DtMetric::Euclidean);
    }
}
