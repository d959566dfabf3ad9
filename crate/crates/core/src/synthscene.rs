//! Analytic scenes of planes and spheres seen by a LiDAR/camera rig.
//!
//! Every quantity is computed in closed form: LiDAR returns, which of them
//! the camera can actually see, and per-pixel depth and normal. Scenes are
//! described in a world frame; sensor poses map sensor coordinates into it.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::completion::DenseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::{direction, lidar_to_camera_axes, CameraIntrinsics, LidarScan, RigidTransform, SparseDepthMap, Vec3};
use crate::normals::NormalMap;

/// Ray parameters below this are treated as self-intersections.
const HIT_EPS: f64 = 1e-9;

/// Rectangular extent of a plane: `|(x - point)·axis_u| ≤ half_u` and
/// `|(x - point)·axis_v| ≤ half_v`, where `axis_v = normal × axis_u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneBounds {
    pub axis_u: Vec3,
    pub half_u: f64,
    pub half_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Plane {
        point: Vec3,
        normal: Vec3,
        bounds: Option<PlaneBounds>,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

impl Surface {
    pub fn plane(point: Vec3, normal: Vec3) -> Self {
        Surface::Plane {
            point,
            normal: normal.normalize(),
            bounds: None,
        }
    }

    pub fn rectangle(point: Vec3, normal: Vec3, axis_u: Vec3, half_u: f64, half_v: f64) -> Self {
        let normal = normal.normalize();
        // Make the in-plane axis exactly orthogonal to the normal.
        let axis_u = (axis_u - normal * axis_u.dot(&normal)).normalize();
        Surface::Plane {
            point,
            normal,
            bounds: Some(PlaneBounds { axis_u, half_u, half_v }),
        }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Surface::Sphere { center, radius }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Surface::Plane { point, normal, bounds } => {
                if !point.iter().chain(normal.iter()).all(|v| v.is_finite()) || (normal.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Scene("plane needs a finite point and a nonzero normal".into()));
                }
                if let Some(b) = bounds {
                    if !(b.half_u > 0.0 && b.half_v > 0.0) || !b.axis_u.iter().all(|v| v.is_finite()) {
                        return Err(Error::Scene("plane bounds need positive half extents".into()));
                    }
                }
            }
            Surface::Sphere { center, radius } => {
                if !center.iter().all(|v| v.is_finite()) || !(*radius > 0.0) {
                    return Err(Error::Scene("sphere needs a finite center and positive radius".into()));
                }
            }
        }
        Ok(())
    }

    /// Smallest `t > 0` with `origin + t·dir` on the surface.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match self {
            Surface::Plane { point, normal, bounds } => {
                let denom = normal.dot(dir);
                if denom == 0.0 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                if !(t > HIT_EPS) {
                    return None;
                }
                if let Some(b) = bounds {
                    let rel = origin + dir * t - point;
                    let axis_v = normal.cross(&b.axis_u);
                    if rel.dot(&b.axis_u).abs() > b.half_u || rel.dot(&axis_v).abs() > b.half_v {
                        return None;
                    }
                }
                Some(t)
            }
            Surface::Sphere { center, radius } => {
                // |o + t d - c|² = R²  ⇒  a t² + 2 b t + c = 0
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let q = -(b + sq.copysign(b));
                let (t0, t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                if lo > HIT_EPS {
                    Some(lo)
                } else if hi > HIT_EPS {
                    Some(hi)
                } else {
                    None
                }
            }
        }
    }

    pub fn normal_at(&self, x: &Vec3) -> Vec3 {
        match self {
            Surface::Plane { normal, .. } => *normal,
            Surface::Sphere { center, .. } => (x - center).normalize(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarPattern {
    pub lines: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_min_deg: f64,
    pub azimuth_max_deg: f64,
    pub azimuth_step_deg: f64,
}

impl LidarPattern {
    /// Elevation of line `l`; line 0 is the lowest.
    pub fn elevation(&self, line: usize) -> f64 {
        let t = if self.lines > 1 {
            line as f64 / (self.lines - 1) as f64
        } else {
            0.5
        };
        (self.elevation_min_deg + t * (self.elevation_max_deg - self.elevation_min_deg)).to_radians()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        let n = ((self.azimuth_max_deg - self.azimuth_min_deg) / self.azimuth_step_deg + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| (self.azimuth_min_deg + k as f64 * self.azimuth_step_deg).to_radians())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.lines == 0 || self.lines > u16::MAX as usize {
            return Err(Error::Scene("lidar needs between 1 and 65535 lines".into()));
        }
        if !(self.azimuth_step_deg > 0.0) {
            return Err(Error::Scene("azimuth step must be positive".into()));
        }
        if !(self.azimuth_max_deg >= self.azimuth_min_deg && self.elevation_max_deg >= self.elevation_min_deg) {
            return Err(Error::Scene("angle ranges must be ordered min ≤ max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub surfaces: Vec<Surface>,
    /// LiDAR → world.
    pub lidar_pose: RigidTransform,
    /// Camera → world.
    pub camera_pose: RigidTransform,
    pub pattern: LidarPattern,
    /// Standard deviation of additive range noise, meters.
    pub range_jitter: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.surfaces.is_empty() {
            return Err(Error::Scene("scene has no surfaces".into()));
        }
        for s in &self.surfaces {
            s.validate()?;
        }
        self.pattern.validate()?;
        if !(self.range_jitter >= 0.0) {
            return Err(Error::Scene("range jitter must be nonnegative".into()));
        }
        Ok(())
    }

    /// LiDAR → camera.
    pub fn extrinsics(&self) -> RigidTransform {
        self.camera_pose.inverse().compose(&self.lidar_pose)
    }

    /// Nearest hit along a ray: `(t, surface index)`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        self.surfaces
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// True when the segment from `from` to `to` crosses no surface before
    /// reaching `to`.
    pub fn visible(&self, from: &Vec3, to: &Vec3) -> bool {
        let d = to - from;
        self.surfaces.iter().filter_map(|s| s.intersect(from, &d)).all(|t| t >= 1.0 - 1e-9)
    }
}

/// A rendered LiDAR sweep with per-point ground truth.
#[derive(Debug, Clone)]
pub struct RenderedScan {
    pub scan: LidarScan,
    pub surface: Vec<usize>,
    /// Whether the camera sees the point.
    pub visible: Vec<bool>,
}

pub fn render_scan(spec: &SceneSpec) -> Result<RenderedScan> {
    spec.validate()?;
    let origin = spec.lidar_pose.translation;
    let camera = spec.camera_pose.translation;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.range_jitter > 0.0).then(|| Normal::new(0.0, spec.range_jitter).expect("valid sigma"));
    let azimuths = spec.pattern.azimuths();

    let mut points = Vec::new();
    let mut lines = Vec::new();
    let mut surface = Vec::new();
    let mut visible = Vec::new();
    for line in 0..spec.pattern.lines {
        let phi = spec.pattern.elevation(line);
        for &theta in &azimuths {
            let dir_l = direction(theta, phi);
            let dir_w = spec.lidar_pose.rotate(&dir_l);
            let Some((t, sid)) = spec.cast(&origin, &dir_w) else { continue };
            let hit = origin + dir_w * t;
            let range = match &noise {
                Some(n) => (t + n.sample(&mut rng)).max(HIT_EPS),
                None => t,
            };
            points.push(dir_l * range);
            lines.push(line as u16);
            surface.push(sid);
            visible.push(spec.visible(&camera, &hit));
        }
    }
    Ok(RenderedScan {
        scan: LidarScan::new(points, Some(lines), Some(spec.pattern.lines))?,
        surface,
        visible,
    })
}

/// Exact per-pixel depth and camera-frame normal, sampled at pixel centers.
#[derive(Debug, Clone)]
pub struct RenderedTruth {
    /// Misses are filled with `max_range`.
    pub depth: DenseDepthMap,
    pub normals: NormalMap,
    pub miss: Vec<bool>,
    pub surface: Vec<Option<usize>>,
}

impl RenderedTruth {
    /// Ground truth as a sparse map with misses left empty.
    pub fn to_sparse(&self) -> SparseDepthMap {
        let mut m = SparseDepthMap::new(self.depth.width, self.depth.height);
        for (i, (&d, &miss)) in self.depth.depth.iter().zip(&self.miss).enumerate() {
            if !miss {
                m.depth[i] = Some(d);
            }
        }
        m
    }
}

pub fn render_truth(spec: &SceneSpec, intr: &CameraIntrinsics, camera_pose: &RigidTransform, max_range: f64) -> Result<RenderedTruth> {
    spec.validate()?;
    intr.validate()?;
    let (w, h) = (intr.width, intr.height);
    let origin = camera_pose.translation;
    let mut depth = vec![max_range; w * h];
    let mut normals = NormalMap::new(w, h);
    let mut miss = vec![true; w * h];
    let mut surface = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let ray_c = intr.ray(x as f64 + 0.5, y as f64 + 0.5);
            let ray_w = camera_pose.rotate(&ray_c);
            // The camera ray has unit z, so the hit parameter is the depth.
            let Some((t, sid)) = spec.cast(&origin, &ray_w) else { continue };
            if t > max_range {
                continue;
            }
            let n_w = spec.surfaces[sid].normal_at(&(origin + ray_w * t));
            let mut n_c = camera_pose.rotation.transpose() * n_w;
            if n_c.dot(&ray_c) > 0.0 {
                n_c = -n_c;
            }
            depth[idx] = t;
            normals.normals[idx] = Some(n_c);
            miss[idx] = false;
            surface[idx] = Some(sid);
        }
    }
    Ok(RenderedTruth {
        depth: DenseDepthMap {
            width: w,
            height: h,
            depth,
        },
        normals,
        miss,
        surface,
    })
}

/// LiDAR pose for a rig whose world frame is the camera frame, with the
/// LiDAR placed at `offset` (camera coordinates).
pub fn lidar_at(offset: Vec3) -> RigidTransform {
    RigidTransform {
        rotation: lidar_to_camera_axes(),
        translation: offset,
    }
}

/// A LiDAR pattern whose lines and azimuths cover the camera frustum with
/// a small margin.
pub fn covering_pattern(intr: &CameraIntrinsics, lines: usize, azimuth_step_deg: f64) -> LidarPattern {
    let half_h = (intr.pu.max(intr.width as f64 - intr.pu) / intr.fu).atan().to_degrees() + 2.0;
    let half_v = (intr.pv.max(intr.height as f64 - intr.pv) / intr.fv).atan().to_degrees() + 1.0;
    LidarPattern {
        lines,
        elevation_min_deg: -half_v,
        elevation_max_deg: half_v,
        azimuth_min_deg: -half_h,
        azimuth_max_deg: half_h,
        azimuth_step_deg,
    }
}

// ---------------------------------------------------------------------------
// Scene files

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseEntry {
    pub rotation: Option<[[f64; 3]; 3]>,
    pub translation: Option<[f64; 3]>,
}

impl PoseEntry {
    fn resolve(entry: Option<&PoseEntry>, default_rotation: Matrix3<f64>) -> Result<RigidTransform> {
        let rotation = entry
            .and_then(|e| e.rotation)
            .map(|r| Matrix3::from_fn(|i, j| r[i][j]))
            .unwrap_or(default_rotation);
        let translation = entry.and_then(|e| e.translation).map(Vec3::from).unwrap_or_else(Vec3::zeros);
        RigidTransform::with_tolerance(rotation, translation, 1e-6).map_err(|e| Error::Scene(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SurfaceEntry {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        axis_u: Option<[f64; 3]>,
        half_extent: Option<[f64; 2]>,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

/// Human-readable scene description (TOML). The world frame defaults to
/// the first camera pose; the LiDAR defaults to sitting at the camera with
/// its own axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub frames: usize,
    #[serde(default)]
    pub range_jitter: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    /// World-frame rig translation applied per frame index.
    #[serde(default)]
    pub rig_step: [f64; 3],
    pub camera: CameraIntrinsics,
    pub camera_pose: Option<PoseEntry>,
    pub lidar_pose: Option<PoseEntry>,
    pub lidar: LidarPattern,
    pub surfaces: Vec<SurfaceEntry>,
}

fn one() -> usize {
    1
}

fn default_max_range() -> f64 {
    crate::geometry::DEFAULT_MAX_RANGE
}

impl SceneFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        file.camera.validate().map_err(|e| Error::Scene(e.to_string()))?;
        if file.frames == 0 {
            return Err(Error::Scene("frames must be at least 1".into()));
        }
        file.frame(0)?;
        Ok(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Scene for frame `k`: the rig moves by `k·rig_step` and the noise
    /// seed is `seed + k`.
    pub fn frame(&self, k: usize) -> Result<SceneSpec> {
        let surfaces = self
            .surfaces
            .iter()
            .map(|s| match *s {
                SurfaceEntry::Plane {
                    point,
                    normal,
                    axis_u,
                    half_extent,
                } => {
                    let (point, normal) = (Vec3::from(point), Vec3::from(normal));
                    if normal.norm() == 0.0 {
                        return Err(Error::Scene("plane normal is zero".into()));
                    }
                    match (axis_u, half_extent) {
                        (Some(a), Some([hu, hv])) => Ok(Surface::rectangle(point, normal, Vec3::from(a), hu, hv)),
                        (None, None) => Ok(Surface::plane(point, normal)),
                        _ => Err(Error::Scene("bounded planes need both axis_u and half_extent".into())),
                    }
                }
                SurfaceEntry::Sphere { center, radius } => Ok(Surface::sphere(Vec3::from(center), radius)),
            })
            .collect::<Result<Vec<_>>>()?;
        let shift = Vec3::from(self.rig_step) * k as f64;
        let mut camera_pose = PoseEntry::resolve(self.camera_pose.as_ref(), Matrix3::identity())?;
        let mut lidar_pose = PoseEntry::resolve(self.lidar_pose.as_ref(), lidar_to_camera_axes())?;
        camera_pose.translation += shift;
        lidar_pose.translation += shift;
        let spec = SceneSpec {
            surfaces,
            lidar_pose,
            camera_pose,
            pattern: self.lidar,
            range_jitter: self.range_jitter,
            seed: self.seed.wrapping_add(k as u64),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Small two-plane occlusion scene used as the default `synth` input.
    pub fn example() -> Self {
        let camera = CameraIntrinsics {
            fu: 300.0,
            fv: 300.0,
            pu: 200.0,
            pv: 75.0,
            width: 400,
            height: 150,
        };
        SceneFile {
            seed: 1,
            frames: 3,
            range_jitter: 0.0,
            max_range: default_max_range(),
            rig_step: [0.0, 0.0, 0.5],
            camera,
            camera_pose: None,
            lidar_pose: Some(PoseEntry {
                rotation: None,
                translation: Some([0.3, 0.0, 0.0]),
            }),
            lidar: covering_pattern(&camera, 32, 0.2),
            surfaces: vec![
                SurfaceEntry::Plane {
                    point: [0.0, 0.0, 20.0],
                    normal: [0.0, 0.0, -1.0],
                    axis_u: None,
                    half_extent: None,
                },
                SurfaceEntry::Plane {
                    point: [-1.0, 0.0, 6.0],
                    normal: [0.0, 0.0, -1.0],
                    axis_u: Some([1.0, 0.0, 0.0]),
                    half_extent: Some([1.0, 1.5]),
                },
                SurfaceEntry::Sphere {
                    center: [2.5, 0.5, 12.0],
                    radius: 1.5,
                },
            ],
        }
    }
}
