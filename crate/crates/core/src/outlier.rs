//! Removal of LiDAR points that the camera cannot see.
//!
//! Because the LiDAR and the camera sit at slightly different positions,
//! some background points seen by the LiDAR fall onto foreground objects
//! when projected into the image. Such a point swaps its left/right or
//! up/down order with nearby foreground points between the two views, and
//! it is deeper than them. A point is dropped when some point of its local
//! image neighborhood shows both symptoms.
//!
//! The neighborhood is sized from the sensor resolutions alone: with `N`
//! projected points from an `L`-line LiDAR on a `W × H` image, points are on
//! average `W·L/N` pixels apart along a row and `H/L` pixels apart across
//! rows. The depth margin `ε` defaults to 1 m.
//!
//! Known misses: outliers that land right on a foreground edge, and
//! foreground objects smaller than one neighborhood.

use crate::error::{Error, Result};
use crate::geometry::{project_point, to_spherical, CameraIntrinsics, LidarScan, RigidTransform, SparseDepthMap};

pub const DEFAULT_EPSILON: f64 = 1.0;

/// Angle differences below this (radians) count as ties. Points of one
/// scan line share an elevation only up to rounding.
pub const ANGLE_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub width: usize,
    pub height: usize,
    pub lines: usize,
    /// Number of points projected into the image.
    pub points: usize,
}

impl SensorSpec {
    pub fn new(width: usize, height: usize, lines: usize, points: usize) -> Result<Self> {
        if width == 0 || height == 0 || lines == 0 || points == 0 {
            return Err(Error::InconsistentSpec(format!(
                "W={width}, H={height}, L={lines}, N={points} must all be positive"
            )));
        }
        Ok(Self {
            width,
            height,
            lines,
            points,
        })
    }

    /// Neighborhood half-widths `(W·L/N, H/L)` in pixels.
    pub fn half_widths(&self) -> (f64, f64) {
        (
            (self.width * self.lines) as f64 / self.points as f64,
            self.height as f64 / self.lines as f64,
        )
    }
}

/// A projected point as seen by both sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPoint {
    /// Scan point id.
    pub id: u32,
    /// Row-major pixel index in the sparse map.
    pub pixel: usize,
    /// Continuous image coordinates.
    pub u: f64,
    pub v: f64,
    /// LiDAR azimuth and elevation.
    pub theta: f64,
    pub phi: f64,
    /// Camera depth.
    pub z: f64,
}

/// Collects the occupants of `sparse` with their continuous pixel position
/// and LiDAR angles.
pub fn outlier_points(
    sparse: &SparseDepthMap,
    scan: &LidarScan,
    extrinsics: &RigidTransform,
    intr: &CameraIntrinsics,
) -> Result<Vec<OutlierPoint>> {
    let mut out = Vec::with_capacity(sparse.count());
    for (pixel, src) in sparse.source.iter().enumerate() {
        let Some(id) = *src else { continue };
        let p = scan
            .points
            .get(id as usize)
            .ok_or_else(|| Error::invalid("source id", format!("{id} outside the scan")))?;
        let proj = project_point(p, extrinsics, intr)
            .ok_or_else(|| Error::invalid("source id", format!("point {id} does not project into the image")))?;
        let s = to_spherical(p)?;
        out.push(OutlierPoint {
            id,
            pixel,
            u: proj.u,
            v: proj.v,
            theta: s.theta,
            phi: s.phi,
            z: sparse.depth[pixel].unwrap_or(proj.z),
        });
    }
    Ok(out)
}

/// Brute-force neighborhood `S(i)`: every other point strictly inside the
/// resolution-derived window around point `i`.
pub fn neighborhood(i: usize, points: &[OutlierPoint], spec: &SensorSpec) -> Vec<usize> {
    let (du, dv) = spec.half_widths();
    let pi = &points[i];
    points
        .iter()
        .enumerate()
        .filter(|&(j, pj)| j != i && (pj.u - pi.u).abs() < du && (pj.v - pi.v).abs() < dv)
        .map(|(j, _)| j)
        .collect()
}

/// Bucket grid with one window width per cell, so a neighborhood query
/// touches at most 3×3 buckets.
struct BucketGrid {
    cell: (f64, f64),
    dims: (usize, usize),
    start: Vec<u32>,
    members: Vec<u32>,
}

impl BucketGrid {
    fn new(points: &[OutlierPoint], cell: (f64, f64)) -> Self {
        let bucket_of = |p: &OutlierPoint| ((p.u / cell.0).floor().max(0.0) as usize, (p.v / cell.1).floor().max(0.0) as usize);
        let (mut nx, mut ny) = (1, 1);
        for p in points {
            let (bx, by) = bucket_of(p);
            nx = nx.max(bx + 1);
            ny = ny.max(by + 1);
        }
        let mut counts = vec![0u32; nx * ny + 1];
        let keys: Vec<usize> = points
            .iter()
            .map(|p| {
                let (bx, by) = bucket_of(p);
                by * nx + bx
            })
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut members = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            members[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        Self {
            cell,
            dims: (nx, ny),
            start: counts,
            members,
        }
    }

    fn candidates(&self, u: f64, v: f64) -> impl Iterator<Item = usize> + '_ {
        let bx = (u / self.cell.0).floor().max(0.0) as usize;
        let by = (v / self.cell.1).floor().max(0.0) as usize;
        let (nx, ny) = self.dims;
        (by.saturating_sub(1)..(by + 2).min(ny)).flat_map(move |y| {
            let row = y * nx;
            let lo = row + bx.saturating_sub(1);
            let hi = row + (bx + 2).min(nx);
            let (a, b) = (self.start[lo] as usize, self.start[hi] as usize);
            self.members[a..b].iter().map(|&m| m as usize)
        })
    }
}

/// Removed points, both by id and as a pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierMask {
    pub width: usize,
    pub height: usize,
    /// Removed scan point ids, ascending.
    pub removed: Vec<u32>,
    pub grid: Vec<bool>,
    /// Number of points the decision ran over.
    pub total: usize,
}

impl OutlierMask {
    pub fn empty(width: usize, height: usize, total: usize) -> Self {
        Self {
            width,
            height,
            removed: Vec::new(),
            grid: vec![false; width * height],
            total,
        }
    }

    pub fn keep_ratio(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            1.0 - self.removed.len() as f64 / self.total as f64
        }
    }
}

fn order_inverted(pi: &OutlierPoint, pj: &OutlierPoint) -> bool {
    // Elevation grows upward while image rows grow downward, so rows are
    // compared against negated elevation.
    let signed = |d: f64| if d.abs() < ANGLE_TIE { 0.0 } else { d };
    (pi.u - pj.u) * signed(pi.theta - pj.theta) < 0.0 || (pi.v - pj.v) * signed(pj.phi - pi.phi) < 0.0
}

/// Flags every point that has a neighbor it is order-inverted with and
/// deeper than by more than `epsilon`. Every verdict reads the original
/// point set, so the result does not depend on iteration order.
pub fn remove_outliers(
    sparse: &SparseDepthMap,
    points: &[OutlierPoint],
    spec: &SensorSpec,
    epsilon: f64,
) -> Result<(SparseDepthMap, OutlierMask)> {
    if spec.points != points.len() {
        return Err(Error::InconsistentSpec(format!(
            "N = {} but {} points were given",
            spec.points,
            points.len()
        )));
    }
    if (spec.width, spec.height) != (sparse.width, sparse.height) {
        return Err(Error::InconsistentSpec(format!(
            "spec is {}x{} but the depth map is {}x{}",
            spec.width, spec.height, sparse.width, sparse.height
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", format!("{epsilon} is not positive")));
    }
    if let Some(p) = points
        .iter()
        .find(|p| p.pixel >= sparse.depth.len() || sparse.depth[p.pixel].is_none())
    {
        return Err(Error::invalid("points", format!("point {} is not in the depth map", p.id)));
    }

    let (du, dv) = spec.half_widths();
    let grid = BucketGrid::new(points, (du, dv));
    let flagged: Vec<bool> = points
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            grid.candidates(pi.u, pi.v).any(|j| {
                let pj = &points[j];
                j != i && (pj.u - pi.u).abs() < du && (pj.v - pi.v).abs() < dv && order_inverted(pi, pj) && pi.z > pj.z + epsilon
            })
        })
        .collect();

    let mut cleaned = sparse.clone();
    let mut mask = OutlierMask::empty(sparse.width, sparse.height, points.len());
    for (p, &f) in points.iter().zip(&flagged) {
        if f {
            cleaned.clear(p.pixel);
            mask.grid[p.pixel] = true;
            mask.removed.push(p.id);
        }
    }
    mask.removed.sort_unstable();
    Ok((cleaned, mask))
}
