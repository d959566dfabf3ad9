//! Camera model, rigid transforms, LiDAR scans and the sparse depth image.
//!
//! Frames follow the usual automotive layout. The camera frame is x-right,
//! y-down, z-forward. The LiDAR frame is x-forward, y-left, z-up. Extrinsics
//! map LiDAR coordinates into the camera frame.
//!
//! Azimuth is `θ = -atan2(y, x)` in the LiDAR frame so that it grows with the
//! image column for points seen by both sensors. Elevation is
//! `φ = atan2(z, hypot(x, y))`; it grows upward, i.e. against the image row.
//!
//! Pixel `(i, j)` covers the continuous square `[i, i+1) × [j, j+1)`, so its
//! center sits at `(i + 0.5, j + 0.5)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Default far clip for projected depths, in meters.
pub const DEFAULT_MAX_RANGE: f64 = 120.0;

/// Rotation taking LiDAR axes (x-fwd, y-left, z-up) onto camera axes
/// (x-right, y-down, z-fwd).
pub fn lidar_to_camera_axes() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub pu: f64,
    pub pv: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, pu: f64, pv: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fu,
            fv,
            pu,
            pv,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fu.is_finite() && self.fv > 0.0 && self.fv.is_finite()) {
            return Err(Error::invalid("focal length", "must be positive and finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size", "width and height must be nonzero"));
        }
        if !(0.0..self.width as f64).contains(&self.pu) || !(0.0..self.height as f64).contains(&self.pv) {
            return Err(Error::invalid(
                "principal point",
                format!("({}, {}) outside the {}x{} image", self.pu, self.pv, self.width, self.height),
            ));
        }
        Ok(())
    }

    /// Camera-frame ray through continuous pixel coordinate `(u, v)`,
    /// scaled so that its z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.pu) / self.fu, (v - self.pv) / self.fv, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        Self::with_tolerance(rotation, translation, Self::ORTHONORMAL_TOLERANCE)
    }

    pub(crate) fn with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tol: f64) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("rigid transform", "non-finite entry"));
        }
        let ortho_err = (rotation * rotation.transpose() - Matrix3::identity()).amax();
        if ortho_err > tol {
            return Err(Error::invalid(
                "rotation",
                format!("not orthonormal (max |R·Rᵀ - I| = {ortho_err:e})"),
            ));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::invalid("rotation", format!("determinant {det} is not +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub points: Vec<Vec3>,
    pub line_index: Option<Vec<u16>>,
    /// Number of scan lines `L`, when known.
    pub num_lines: Option<usize>,
}

impl LidarScan {
    pub fn new(points: Vec<Vec3>, line_index: Option<Vec<u16>>, num_lines: Option<usize>) -> Result<Self> {
        if let Some(bad) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("points", format!("point {bad} has a non-finite coordinate")));
        }
        if let Some(lines) = &line_index {
            if lines.len() != points.len() {
                return Err(Error::invalid(
                    "line_index",
                    format!("{} indices for {} points", lines.len(), points.len()),
                ));
            }
            let l = num_lines.ok_or_else(|| Error::invalid("num_lines", "required with line indices"))?;
            if let Some(&max) = lines.iter().max() {
                if max as usize >= l {
                    return Err(Error::invalid("line_index", format!("index {max} not below L = {l}")));
                }
            }
        }
        Ok(Self {
            points,
            line_index,
            num_lines,
        })
    }

    pub fn unordered(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, None, None)
    }

    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            line_index: None,
            num_lines: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points selected by `keep`, preserving order and line info.
    pub fn select(&self, keep: &[usize]) -> LidarScan {
        LidarScan {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            line_index: self.line_index.as_ref().map(|lines| keep.iter().map(|&i| lines[i]).collect()),
            num_lines: self.num_lines,
        }
    }

    /// Assigns pseudo-lines by binning elevation uniformly into `lines` bins
    /// over the observed elevation span. Existing indices are left alone.
    pub fn with_elevation_lines(mut self, lines: usize) -> Result<Self> {
        if self.line_index.is_some() {
            return Ok(self);
        }
        if lines == 0 || lines > u16::MAX as usize {
            return Err(Error::invalid("lines", format!("{lines} is out of range")));
        }
        let phis: Vec<f64> = self.points.iter().map(|p| p.z.atan2(p.x.hypot(p.y))).collect();
        let (lo, hi) = phis
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let span = hi - lo;
        let idx = phis
            .iter()
            .map(|&p| {
                if lines == 1 || span <= 0.0 {
                    0
                } else {
                    let b = ((p - lo) / span * (lines - 1) as f64).round();
                    b.clamp(0.0, (lines - 1) as f64) as u16
                }
            })
            .collect();
        self.line_index = Some(idx);
        self.num_lines = Some(lines);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    /// Set at the poles, where azimuth is undefined and reported as 0.
    pub degenerate_azimuth: bool,
}

pub fn to_spherical(p: &Vec3) -> Result<SphericalPoint> {
    if !p.iter().all(|c| c.is_finite()) {
        return Err(Error::DegenerateInput("non-finite point".into()));
    }
    let r = p.norm();
    if r == 0.0 {
        return Err(Error::DegenerateInput("zero-norm point has no direction".into()));
    }
    let horizontal = p.x.hypot(p.y);
    if horizontal == 0.0 {
        return Ok(SphericalPoint {
            r,
            theta: 0.0,
            phi: FRAC_PI_2.copysign(p.z),
            degenerate_azimuth: true,
        });
    }
    let mut theta = -p.y.atan2(p.x);
    if theta <= -PI {
        theta = PI;
    }
    Ok(SphericalPoint {
        r,
        theta,
        phi: p.z.atan2(horizontal),
        degenerate_azimuth: false,
    })
}

/// Unit direction for azimuth `theta` and elevation `phi`.
pub fn direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(cp * ct, -cp * st, sp)
}

pub fn from_spherical(s: &SphericalPoint) -> Vec3 {
    direction(s.theta, s.phi) * s.r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl Projection {
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

/// Projects a camera-frame point. Empty when behind the camera or outside
/// the image.
pub fn project_camera_point(pc: &Vec3, intr: &CameraIntrinsics) -> Option<Projection> {
    if !(pc.z > 0.0) {
        return None;
    }
    let u = intr.fu * pc.x / pc.z + intr.pu;
    let v = intr.fv * pc.y / pc.z + intr.pv;
    let inside = u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64;
    inside.then_some(Projection { u, v, z: pc.z })
}

pub fn project_point(p: &Vec3, extrinsics: &RigidTransform, intr: &CameraIntrinsics) -> Option<Projection> {
    project_camera_point(&extrinsics.apply(p), intr)
}

pub fn unproject_pixel(u: f64, v: f64, z: f64, intr: &CameraIntrinsics) -> Result<Vec3> {
    if !(z > 0.0) {
        return Err(Error::invalid("z", format!("{z} is not positive")));
    }
    Ok(intr.ray(u, v) * z)
}

/// Read access shared by sparse and dense depth images.
pub trait DepthGrid {
    fn dims(&self) -> (usize, usize);
    fn depth_at(&self, idx: usize) -> Option<f64>;
}

/// Row-major `width × height` grid of optional depths with the id of the
/// scan point that produced each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<Option<f64>>,
    pub source: Vec<Option<u32>>,
}

impl SparseDepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![None; width * height],
            source: vec![None; width * height],
        }
    }

    pub fn from_depths(width: usize, height: usize, depth: Vec<Option<f64>>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::invalid(
                "depth",
                format!("{} cells for a {width}x{height} grid", depth.len()),
            ));
        }
        if let Some(d) = depth.iter().flatten().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("depth", format!("{d} is not a positive finite depth")));
        }
        Ok(Self {
            width,
            height,
            source: vec![None; depth.len()],
            depth,
        })
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.depth[self.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64, source: Option<u32>) {
        let i = self.index(x, y);
        self.depth[i] = Some(depth);
        self.source[i] = source;
    }

    pub fn clear(&mut self, idx: usize) {
        self.depth[idx] = None;
        self.source[idx] = None;
    }

    /// `(pixel index, depth)` of every occupied cell in row-major order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.depth.iter().enumerate().filter_map(|(i, d)| d.map(|d| (i, d)))
    }

    pub fn count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }

    pub fn density(&self) -> f64 {
        if self.depth.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.depth.len() as f64
        }
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.depth.iter().map(Option::is_some).collect()
    }
}

impl DepthGrid for SparseDepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn depth_at(&self, idx: usize) -> Option<f64> {
        self.depth[idx]
    }
}

/// Projects every scan point and z-buffers them onto the image: the nearest
/// depth in a pixel wins, ties go to the lower point id. Points deeper than
/// `max_range` are dropped.
pub fn project_scan(scan: &LidarScan, extrinsics: &RigidTransform, intr: &CameraIntrinsics, max_range: f64) -> SparseDepthMap {
    let mut map = SparseDepthMap::new(intr.width, intr.height);
    for (id, p) in scan.points.iter().enumerate() {
        let Some(proj) = project_point(p, extrinsics, intr) else {
            continue;
        };
        if proj.z > max_range {
            continue;
        }
        let (x, y) = proj.pixel();
        let idx = map.index(x, y);
        if map.depth[idx].is_none_or(|d| proj.z < d) {
            map.depth[idx] = Some(proj.z);
            map.source[idx] = Some(id as u32);
        }
    }
    map
}
