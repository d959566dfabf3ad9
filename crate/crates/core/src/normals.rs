//! Surface normals from a spherical range image.
//!
//! A LiDAR sweep samples the range as a function `r(θ, φ)` of azimuth and
//! elevation. The surface is the zero set of `F(p) = ‖p‖ - r(θ(p), φ(p))`,
//! so its normal is the gradient
//!
//! ```text
//! ∇F = e_r - (∂r/∂θ) / (r cos φ) · e_θ - (∂r/∂φ) / r · e_φ
//!    = [e_r e_θ e_φ] · (1, -(∂r/∂θ)/(r cos φ), -(∂r/∂φ)/r)ᵀ
//! ```
//!
//! where the columns `e_r, e_θ, e_φ` are the local spherical frame, i.e. the
//! rotation `R_{θ,φ}` applied to the Cartesian unit vectors. The partials are
//! estimated on the range image like an edge filter, using each cell's exact
//! stored angles.

use crate::error::{Error, Result};
use crate::geometry::{direction, to_spherical, LidarScan, RigidTransform, SparseDepthMap, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCell {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub id: u32,
}

/// Azimuth × line grid. Cell `(col, row)` lives at `row * cols + col`.
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<Option<RangeCell>>,
    /// Cell index of every scan point, `None` for points with no direction.
    pub point_cell: Vec<Option<usize>>,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl RangeImage {
    pub fn cell(&self, col: usize, row: usize) -> Option<&RangeCell> {
        self.cells[row * self.cols + col].as_ref()
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Bins the scan into `cols` azimuth columns spanning the observed azimuth
/// range and one row per scan line. Scans without line indices are binned by
/// elevation into `num_lines` rows. Colliding points keep the smaller range.
pub fn build_range_image(scan: &LidarScan, cols: usize) -> Result<RangeImage> {
    if scan.is_empty() {
        return Err(Error::Empty("range image needs at least one point".into()));
    }
    if cols < 4 {
        return Err(Error::invalid("cols", format!("{cols} < 4")));
    }
    let lined;
    let scan = if scan.line_index.is_some() {
        scan
    } else {
        let lines = scan
            .num_lines
            .ok_or_else(|| Error::invalid("num_lines", "needed to bin a scan without line indices"))?;
        lined = scan.clone().with_elevation_lines(lines)?;
        &lined
    };
    let lines = scan.line_index.as_ref().unwrap();
    let rows = scan.num_lines.unwrap();

    let sph: Vec<_> = scan.points.iter().map(|p| to_spherical(p).ok()).collect();
    let (theta_min, theta_max) = sph
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.theta), hi.max(s.theta)));
    let span = theta_max - theta_min;

    let mut cells: Vec<Option<RangeCell>> = vec![None; cols * rows];
    let mut point_cell = vec![None; scan.len()];
    for (id, s) in sph.iter().enumerate() {
        let Some(s) = s else { continue };
        let col = if span > 0.0 {
            ((s.theta - theta_min) / span * (cols - 1) as f64)
                .round()
                .clamp(0.0, (cols - 1) as f64) as usize
        } else {
            0
        };
        let idx = lines[id] as usize * cols + col;
        point_cell[id] = Some(idx);
        if cells[idx].is_none_or(|c| s.r < c.r) {
            cells[idx] = Some(RangeCell {
                r: s.r,
                theta: s.theta,
                phi: s.phi,
                id: id as u32,
            });
        }
    }
    Ok(RangeImage {
        cols,
        rows,
        cells,
        point_cell,
        theta_min,
        theta_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalOptions {
    /// Farthest neighbor, in cells, used by the derivative stencil.
    pub max_gap: usize,
    /// 3×3 box filter over the range partials before composing normals.
    pub smooth_derivatives: bool,
    /// Give occupied cells that lack a normal the normal of the nearest
    /// cell (same row, then same column) that has one.
    pub fill_in_range_image: bool,
}

impl Default for NormalOptions {
    fn default() -> Self {
        Self {
            max_gap: 3,
            smooth_derivatives: true,
            fill_in_range_image: false,
        }
    }
}

/// `(Δθ, Δφ, Δr)` between two cells.
fn delta(a: &RangeCell, b: &RangeCell) -> [f64; 3] {
    [a.theta - b.theta, a.phi - b.phi, a.r - b.r]
}

/// Unit normal of the surface `r(θ, φ)` at a sample, facing the sensor.
pub fn compose_normal(r: f64, theta: f64, phi: f64, dr_dtheta: f64, dr_dphi: f64) -> Option<Vec3> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let e_r = direction(theta, phi);
    let e_theta = Vec3::new(-st, -ct, 0.0);
    let e_phi = Vec3::new(-sp * ct, sp * st, cp);
    let grad = e_r - e_theta * (dr_dtheta / (r * cp)) - e_phi * (dr_dphi / r);
    let norm = grad.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    let n = grad / norm;
    // The sensor sits at the origin, so a normal facing it has n·p < 0.
    Some(if n.dot(&e_r) > 0.0 { -n } else { n })
}

/// Unit normal for every scan point, in the LiDAR frame. Points sharing a
/// range-image cell share its normal.
pub fn estimate_normals(ri: &RangeImage, opts: &NormalOptions) -> Result<Vec<Option<Vec3>>> {
    if ri.occupied() < 3 {
        return Err(Error::Empty(format!(
            "normal estimation needs 3 occupied cells, got {}",
            ri.occupied()
        )));
    }
    let (cols, rows) = (ri.cols, ri.rows);
    let gap = opts.max_gap.max(1);

    let find = |col: usize, row: usize, dc: isize, dr: isize| -> Option<&RangeCell> {
        (1..=gap as isize).find_map(|k| {
            let c = col as isize + dc * k;
            let r = row as isize + dr * k;
            if c < 0 || r < 0 || c >= cols as isize || r >= rows as isize {
                return None;
            }
            ri.cell(c as usize, r as usize)
        })
    };
    let stencil = |center: &RangeCell, lo: Option<&RangeCell>, hi: Option<&RangeCell>| match (lo, hi) {
        (Some(a), Some(b)) => Some(delta(b, a)),
        (Some(a), None) => Some(delta(center, a)),
        (None, Some(b)) => Some(delta(b, center)),
        (None, None) => None,
    };

    // Range partials (∂r/∂θ, ∂r/∂φ) per cell.
    let mut partials: Vec<Option<(f64, f64)>> = vec![None; cols * rows];
    for row in 0..rows {
        for col in 0..cols {
            let Some(c) = ri.cell(col, row) else { continue };
            let h = stencil(c, find(col, row, -1, 0), find(col, row, 1, 0));
            let v = stencil(c, find(col, row, 0, -1), find(col, row, 0, 1));
            let (Some(h), Some(v)) = (h, v) else { continue };
            partials[row * cols + col] = solve_partials(h, v);
        }
    }

    if opts.smooth_derivatives {
        let mut smoothed = vec![None; cols * rows];
        for row in 0..rows {
            for col in 0..cols {
                if partials[row * cols + col].is_none() {
                    continue;
                }
                let (mut st, mut sp, mut n) = (0.0, 0.0, 0usize);
                for r in row.saturating_sub(1)..(row + 2).min(rows) {
                    for c in col.saturating_sub(1)..(col + 2).min(cols) {
                        if let Some((a, b)) = partials[r * cols + c] {
                            st += a;
                            sp += b;
                            n += 1;
                        }
                    }
                }
                smoothed[row * cols + col] = Some((st / n as f64, sp / n as f64));
            }
        }
        partials = smoothed;
    }

    let mut cell_normals: Vec<Option<Vec3>> = ri
        .cells
        .iter()
        .zip(&partials)
        .map(|(cell, p)| match (cell, p) {
            (Some(c), Some((a, b))) => compose_normal(c.r, c.theta, c.phi, *a, *b),
            _ => None,
        })
        .collect();

    if opts.fill_in_range_image {
        let source = cell_normals.clone();
        for row in 0..rows {
            for col in 0..cols {
                let idx = row * cols + col;
                if ri.cells[idx].is_none() || source[idx].is_some() {
                    continue;
                }
                let pick = |dc: isize, dr: isize| {
                    (1..=gap as isize).find_map(|k| {
                        let c = col as isize + dc * k;
                        let r = row as isize + dr * k;
                        if c < 0 || r < 0 || c >= cols as isize || r >= rows as isize {
                            return None;
                        }
                        source[r as usize * cols + c as usize].map(|n| (k, n))
                    })
                };
                let best = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .into_iter()
                    .filter_map(|(dc, dr)| pick(dc, dr))
                    .min_by_key(|(k, _)| *k);
                cell_normals[idx] = best.map(|(_, n)| n);
            }
        }
    }

    Ok(ri.point_cell.iter().map(|c| c.and_then(|c| cell_normals[c])).collect())
}

/// Solves `[Δθ_h Δφ_h; Δθ_v Δφ_v]·(∂r/∂θ, ∂r/∂φ)ᵀ = (Δr_h, Δr_v)ᵀ`, which
/// accounts for rings whose samples are not aligned in azimuth.
fn solve_partials(h: [f64; 3], v: [f64; 3]) -> Option<(f64, f64)> {
    let det = h[0] * v[1] - h[1] * v[0];
    let scale = (h[0] * v[1]).abs() + (h[1] * v[0]).abs();
    if scale > 0.0 && det.abs() > 1e-9 * scale {
        let a = (h[2] * v[1] - h[1] * v[2]) / det;
        let b = (h[0] * v[2] - h[2] * v[0]) / det;
        return (a.is_finite() && b.is_finite()).then_some((a, b));
    }
    if h[0] != 0.0 && v[1] != 0.0 {
        Some((h[2] / h[0], v[2] / v[1]))
    } else {
        None
    }
}

/// Per-pixel optional unit normals in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Option<Vec3>>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normals: vec![None; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }
}

/// Rotates each occupied pixel's source-point normal into the camera frame
/// and orients it toward the camera.
pub fn normals_to_camera(
    normals: &[Option<Vec3>],
    scan: &LidarScan,
    extrinsics: &RigidTransform,
    sparse: &SparseDepthMap,
) -> Result<NormalMap> {
    if normals.len() != scan.len() {
        return Err(Error::invalid(
            "normals",
            format!("{} normals for {} points", normals.len(), scan.len()),
        ));
    }
    let mut map = NormalMap::new(sparse.width, sparse.height);
    for (idx, src) in sparse.source.iter().enumerate() {
        let Some(src) = src else { continue };
        let src = *src as usize;
        if src >= scan.len() {
            return Err(Error::invalid("source id", format!("{src} outside the scan")));
        }
        let Some(n) = normals[src] else { continue };
        let mut nc = extrinsics.rotate(&n);
        nc /= nc.norm();
        if nc.dot(&extrinsics.apply(&scan.points[src])) > 0.0 {
            nc = -nc;
        }
        map.normals[idx] = Some(nc);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lidar_to_camera_axes, project_scan, CameraIntrinsics};
    use nalgebra::Matrix3;

    fn grid_scan(thetas: &[f64], phis: &[f64], range: impl Fn(f64, f64) -> f64) -> LidarScan {
        let mut pts = Vec::new();
        let mut lines = Vec::new();
        for (row, &phi) in phis.iter().enumerate() {
            for &theta in thetas {
                pts.push(direction(theta, phi) * range(theta, phi));
                lines.push(row as u16);
            }
        }
        LidarScan::new(pts, Some(lines), Some(phis.len())).unwrap()
    }

    fn linspace(lo_deg: f64, hi_deg: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| (lo_deg + (hi_deg - lo_deg) * k as f64 / (n - 1) as f64).to_radians())
            .collect()
    }

    #[test]
    fn single_point_range_image() {
        let p = Vec3::new(3.0, 1.0, 0.5);
        let scan = LidarScan::new(vec![p], Some(vec![0]), Some(1)).unwrap();
        let ri = build_range_image(&scan, 8).unwrap();
        assert_eq!(ri.occupied(), 1);
        let s = to_spherical(&p).unwrap();
        let c = ri.cells.iter().flatten().next().unwrap();
        assert_eq!((c.r, c.theta, c.phi, c.id), (s.r, s.theta, s.phi, 0));
    }

    #[test]
    fn rows_follow_ring_indices() {
        let thetas = linspace(-20.0, 20.0, 30);
        let phis = linspace(-12.0, 2.0, 64);
        let scan = grid_scan(&thetas, &phis, |_, _| 10.0);
        let ri = build_range_image(&scan, 30).unwrap();
        assert_eq!(ri.rows, 64);
        for (id, cell) in ri.point_cell.iter().enumerate() {
            assert_eq!(cell.unwrap() / ri.cols, id / 30);
        }
    }

    #[test]
    fn columns_follow_azimuth_order() {
        let thetas = linspace(-30.0, 30.0, 100);
        let scan = grid_scan(&thetas, &linspace(-1.0, 1.0, 3), |_, _| 7.0);
        let ri = build_range_image(&scan, 100).unwrap();
        for row in 0..3 {
            let ordered: Vec<f64> = (0..100).filter_map(|c| ri.cell(c, row)).map(|c| c.theta).collect();
            let mut sorted = ordered.clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(ordered.len(), 100);
            assert_eq!(ordered, sorted);
        }
    }

    #[test]
    fn collisions_keep_nearest() {
        let scan = LidarScan::new(
            vec![
                Vec3::new(9.0, 0.0, 0.0),
                Vec3::new(4.0, 0.0, 0.0),
                Vec3::new(4.0, 2.0, 0.0),
                Vec3::new(4.0, -2.0, 0.0),
            ],
            Some(vec![0; 4]),
            Some(1),
        )
        .unwrap();
        let ri = build_range_image(&scan, 5).unwrap();
        assert_eq!(ri.point_cell[0], ri.point_cell[1]);
        assert_eq!(ri.cells[ri.point_cell[0].unwrap()].unwrap().id, 1);
    }

    #[test]
    fn bad_inputs() {
        assert!(build_range_image(&LidarScan::empty(), 8).is_err());
        let scan = LidarScan::unordered(vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(build_range_image(&scan, 3).is_err());
        assert!(build_range_image(&scan, 8).is_err());
    }

    #[test]
    fn sphere_normals_are_radial() {
        let scan = grid_scan(&linspace(-40.0, 40.0, 200), &linspace(-15.0, 5.0, 32), |_, _| 12.5);
        let ri = build_range_image(&scan, 200).unwrap();
        let normals = estimate_normals(&ri, &NormalOptions::default()).unwrap();
        let mut count = 0;
        for (p, n) in scan.points.iter().zip(&normals) {
            let n = n.unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!((n.dot(&(p / p.norm())) + 1.0).abs() < 1e-6);
            count += 1;
        }
        assert_eq!(count, scan.len());
    }

    fn plane_normal_error(step_deg: f64) -> f64 {
        let n_theta = (60.0 / step_deg) as usize + 1;
        let n_phi = (20.0 / step_deg) as usize + 1;
        let scan = grid_scan(&linspace(-30.0, 30.0, n_theta), &linspace(-10.0, 10.0, n_phi), |t, p| {
            5.0 / (p.cos() * t.cos())
        });
        let ri = build_range_image(&scan, n_theta).unwrap();
        let normals = estimate_normals(&ri, &NormalOptions::default()).unwrap();
        let mut errs: Vec<f64> = normals.iter().flatten().map(|n| (n - Vec3::new(-1.0, 0.0, 0.0)).amax()).collect();
        errs.sort_by(f64::total_cmp);
        errs[errs.len() / 2]
    }

    #[test]
    fn plane_normals_converge() {
        let coarse = plane_normal_error(1.0);
        let fine = plane_normal_error(0.1);
        assert!(fine < coarse, "{fine} !< {coarse}");
        assert!(fine < 1e-4, "{fine}");
    }

    #[test]
    fn isolated_cell_has_no_normal() {
        let mut pts = Vec::new();
        let mut lines = Vec::new();
        for row in 0..3u16 {
            for k in 0..3 {
                pts.push(direction((k as f64).to_radians(), (row as f64).to_radians()) * 10.0);
                lines.push(row);
            }
        }
        // Far to the right in azimuth with no horizontal neighbor in range.
        pts.push(direction(30f64.to_radians(), 1f64.to_radians()) * 10.0);
        lines.push(1);
        let scan = LidarScan::new(pts, Some(lines), Some(3)).unwrap();
        let ri = build_range_image(&scan, 31).unwrap();
        let normals = estimate_normals(&ri, &NormalOptions::default()).unwrap();
        assert!(normals[9].is_none());
        assert!(normals[4].is_some());

        let opts = NormalOptions {
            fill_in_range_image: true,
            max_gap: 30,
            ..Default::default()
        };
        let filled = estimate_normals(&ri, &opts).unwrap();
        assert!(filled.iter().all(|n| n.is_some()));
    }

    #[test]
    fn too_few_cells_is_error() {
        let scan = LidarScan::new(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 0.1, 0.0)], Some(vec![0, 0]), Some(1)).unwrap();
        let ri = build_range_image(&scan, 4).unwrap();
        assert!(estimate_normals(&ri, &NormalOptions::default()).is_err());
    }

    fn camera_setup(rotation: Matrix3<f64>) -> (LidarScan, RigidTransform, SparseDepthMap) {
        let ext = RigidTransform::new(rotation, Vec3::zeros()).unwrap();
        let intr = CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap();
        let scan = LidarScan::unordered(vec![ext.inverse().apply(&Vec3::new(0.0, 0.0, 5.0))]).unwrap();
        let sparse = project_scan(&scan, &ext, &intr, 120.0);
        (scan, ext, sparse)
    }

    #[test]
    fn camera_normals_identity_extrinsics() {
        let (scan, ext, sparse) = camera_setup(Matrix3::identity());
        let map = normals_to_camera(&[Some(Vec3::new(0.0, 0.0, -1.0))], &scan, &ext, &sparse).unwrap();
        assert_eq!(map.normals[24 * 64 + 32], Some(Vec3::new(0.0, 0.0, -1.0)));
        // Wrongly oriented input gets flipped toward the camera.
        let map = normals_to_camera(&[Some(Vec3::new(0.0, 0.0, 1.0))], &scan, &ext, &sparse).unwrap();
        assert_eq!(map.normals[24 * 64 + 32], Some(Vec3::new(0.0, 0.0, -1.0)));
    }

    #[test]
    fn camera_normals_rotate() {
        // LiDAR axes to camera axes: LiDAR -x becomes camera -z.
        let (scan, ext, sparse) = camera_setup(lidar_to_camera_axes());
        let map = normals_to_camera(&[Some(Vec3::new(-1.0, 0.0, 0.0))], &scan, &ext, &sparse).unwrap();
        let n = map.normals[24 * 64 + 32].unwrap();
        assert!((n - Vec3::new(0.0, 0.0, -1.0)).amax() < 1e-12);
        assert!((n.norm() - 1.0).abs() < 1e-9);

        // 90° yaw about the LiDAR z axis maps (-1, 0, 0) to (0, -1, 0).
        let yaw = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let ext = RigidTransform::new(yaw, Vec3::zeros()).unwrap();
        let p = Vec3::new(0.0, 0.0, 5.0);
        let scan = LidarScan::unordered(vec![ext.inverse().apply(&p)]).unwrap();
        let n = ext.rotate(&Vec3::new(-1.0, 0.0, 0.0));
        assert!((n - Vec3::new(0.0, -1.0, 0.0)).amax() < 1e-12);
        let intr = CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap();
        let sparse = project_scan(&scan, &ext, &intr, 120.0);
        let map = normals_to_camera(&[Some(Vec3::new(-1.0, 0.0, 0.0))], &scan, &ext, &sparse).unwrap();
        let got = map.normals[24 * 64 + 32].unwrap();
        assert!((got.norm() - 1.0).abs() < 1e-9);
        assert!((got.abs() - Vec3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn missing_source_normal_stays_empty() {
        let (scan, ext, sparse) = camera_setup(Matrix3::identity());
        let map = normals_to_camera(&[None], &scan, &ext, &sparse).unwrap();
        assert_eq!(map.count(), 0);
    }
}
