//! Benchmark metrics, line-dropping sparsification and nearest-seed
//! statistics.
//!
//! Depth errors are reported in millimeters, inverse-depth errors in 1/km
//! (`1000 / depth_m`), matching the KITTI devkit.

use serde::{Deserialize, Serialize};

use crate::dt::{nearest_seeds, DtMetric};
use crate::error::{Error, Result};
use crate::geometry::{DepthGrid, LidarScan, SparseDepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub irmse: f64,
    pub imae: f64,
    pub density: f64,
    pub keep_ratio: f64,
    pub evaluated_pixels: u64,
}

/// Mergeable sums behind an [`EvalReport`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalAccumulator {
    pub sum_sq: f64,
    pub sum_abs: f64,
    pub sum_inv_sq: f64,
    pub sum_inv_abs: f64,
    pub count: u64,
    pub occupied: u64,
    pub pixels: u64,
    pub kept: u64,
    pub total_points: u64,
}

impl EvalAccumulator {
    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.sum_sq += other.sum_sq;
        self.sum_abs += other.sum_abs;
        self.sum_inv_sq += other.sum_inv_sq;
        self.sum_inv_abs += other.sum_inv_abs;
        self.count += other.count;
        self.occupied += other.occupied;
        self.pixels += other.pixels;
        self.kept += other.kept;
        self.total_points += other.total_points;
    }

    pub fn with_keep(mut self, kept: u64, total: u64) -> Self {
        self.kept = kept;
        self.total_points = total;
        self
    }

    pub fn report(&self) -> EvalReport {
        let n = self.count.max(1) as f64;
        EvalReport {
            rmse: (self.sum_sq / n).sqrt(),
            mae: self.sum_abs / n,
            irmse: (self.sum_inv_sq / n).sqrt(),
            imae: self.sum_inv_abs / n,
            density: if self.pixels == 0 {
                0.0
            } else {
                self.occupied as f64 / self.pixels as f64
            },
            keep_ratio: if self.total_points == 0 {
                1.0
            } else {
                self.kept as f64 / self.total_points as f64
            },
            evaluated_pixels: self.count,
        }
    }
}

/// Sums over pixels valid in both maps, skipping the top `crop_top` rows.
pub fn accumulate<P: DepthGrid + ?Sized>(pred: &P, gt: &SparseDepthMap, crop_top: usize) -> Result<EvalAccumulator> {
    let (w, h) = pred.dims();
    if (w, h) != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch {
            expected: (gt.width, gt.height),
            actual: (w, h),
        });
    }
    if gt.count() == 0 {
        return Err(Error::Empty("ground truth has no valid pixel".into()));
    }
    let mut acc = EvalAccumulator {
        pixels: (w * h) as u64,
        ..Default::default()
    };
    for idx in 0..w * h {
        let p = pred.depth_at(idx);
        if p.is_some() {
            acc.occupied += 1;
        }
        if idx / w < crop_top {
            continue;
        }
        let (Some(p), Some(g)) = (p, gt.depth[idx]) else { continue };
        let err = (p - g) * 1000.0;
        let inv_err = 1000.0 / p - 1000.0 / g;
        acc.sum_sq += err * err;
        acc.sum_abs += err.abs();
        acc.sum_inv_sq += inv_err * inv_err;
        acc.sum_inv_abs += inv_err.abs();
        acc.count += 1;
    }
    if acc.count == 0 {
        return Err(Error::Empty("prediction and ground truth share no valid pixel".into()));
    }
    Ok(acc)
}

pub fn metrics<P: DepthGrid + ?Sized>(pred: &P, gt: &SparseDepthMap) -> Result<EvalReport> {
    Ok(accumulate(pred, gt, 0)?.report())
}

/// Simulates a sparser LiDAR by keeping every `L/target`-th line, starting
/// at line `phase`. Kept lines are renumbered `0..target`.
pub fn sparsify(scan: &LidarScan, target_lines: usize, phase: usize) -> Result<LidarScan> {
    let lines = scan.line_index.as_ref().ok_or(Error::MissingLineIndex)?;
    let total = scan.num_lines.ok_or(Error::MissingLineIndex)?;
    if target_lines == 0 || target_lines > total || total % target_lines != 0 {
        return Err(Error::invalid(
            "target_lines",
            format!("{target_lines} does not evenly divide {total} lines"),
        ));
    }
    let step = total / target_lines;
    if phase >= step {
        return Err(Error::invalid("phase", format!("{phase} >= line step {step}")));
    }
    let keep: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, &l)| l as usize % step == phase)
        .map(|(i, _)| i)
        .collect();
    let mut out = scan.select(&keep);
    out.line_index = Some(keep.iter().map(|&i| ((lines[i] as usize - phase) / step) as u16).collect());
    out.num_lines = Some(target_lines);
    Ok(out)
}

/// Largest L1 distance with its own histogram bin; farther pixels share
/// the overflow bin.
pub const STATS_MAX_DISTANCE: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearestStats {
    /// Fraction of ground-truth pixels per L1 distance bin `0..=30`, then
    /// the overflow bin.
    pub fraction: Vec<f64>,
    pub pixels: Vec<u64>,
    /// Mean |nearest seed depth − ground truth| per bin, millimeters.
    pub raw_error_mm: Vec<Option<f64>>,
    /// Same, with every seed's depth replaced by its ground truth where
    /// available.
    pub gt_seed_error_mm: Vec<Option<f64>>,
}

pub fn nearest_stats(sparse: &SparseDepthMap, gt: &SparseDepthMap) -> Result<NearestStats> {
    if (sparse.width, sparse.height) != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch {
            expected: (gt.width, gt.height),
            actual: (sparse.width, sparse.height),
        });
    }
    let seeds = nearest_seeds(sparse.width, sparse.height, &sparse.occupancy(), DtMetric::L1)
        .ok_or_else(|| Error::Empty("sparse map has no occupied pixel".into()))?;
    let bins = STATS_MAX_DISTANCE + 2;
    let mut pixels = vec![0u64; bins];
    let mut raw_sum = vec![0.0; bins];
    let mut gt_sum = vec![0.0; bins];
    let w = sparse.width;
    for (idx, &s) in seeds.iter().enumerate() {
        let Some(g) = gt.depth[idx] else { continue };
        let s = s as usize;
        let d = (s % w).abs_diff(idx % w) + (s / w).abs_diff(idx / w);
        let bin = d.min(STATS_MAX_DISTANCE + 1);
        let raw = sparse.depth[s].expect("seed is occupied");
        let substituted = gt.depth[s].unwrap_or(raw);
        pixels[bin] += 1;
        raw_sum[bin] += (raw - g).abs() * 1000.0;
        gt_sum[bin] += (substituted - g).abs() * 1000.0;
    }
    let total: u64 = pixels.iter().sum();
    if total == 0 {
        return Err(Error::Empty("ground truth has no valid pixel".into()));
    }
    let mean = |sum: &[f64]| -> Vec<Option<f64>> { sum.iter().zip(&pixels).map(|(s, &n)| (n > 0).then(|| s / n as f64)).collect() };
    Ok(NearestStats {
        fraction: pixels.iter().map(|&n| n as f64 / total as f64).collect(),
        raw_error_mm: mean(&raw_sum),
        gt_seed_error_mm: mean(&gt_sum),
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, cells: &[(usize, f64)]) -> SparseDepthMap {
        let mut m = SparseDepthMap::new(w, h);
        for &(i, d) in cells {
            m.depth[i] = Some(d);
        }
        m
    }

    #[test]
    fn identical_maps_score_zero() {
        let gt = map(4, 2, &[(0, 3.0), (5, 7.5)]);
        let r = metrics(&gt, &gt).unwrap();
        assert_eq!((r.rmse, r.mae, r.irmse, r.imae), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.evaluated_pixels, 2);
        assert_eq!(r.density, 0.25);
    }

    #[test]
    fn hand_evaluated_case() {
        let pred = map(2, 1, &[(0, 2.0), (1, 4.0)]);
        let gt = map(2, 1, &[(0, 1.0), (1, 2.0)]);
        let r = metrics(&pred, &gt).unwrap();
        // Errors 1000 and 2000 mm; inverse depths 500/250 vs 1000/500 1/km.
        let rmse = ((1000.0f64.powi(2) + 2000.0f64.powi(2)) / 2.0).sqrt();
        let irmse = ((500.0f64.powi(2) + 250.0f64.powi(2)) / 2.0).sqrt();
        assert!((r.rmse - rmse).abs() <= 1e-9 * rmse);
        assert!((r.rmse - 1581.1388300841897).abs() < 1e-9);
        assert_eq!(r.mae, 1500.0);
        assert!((r.irmse - irmse).abs() <= 1e-9 * irmse);
        assert!((r.irmse - 395.28470752104744).abs() < 1e-9);
        assert_eq!(r.imae, 375.0);
    }

    #[test]
    fn sparse_prediction_uses_intersection() {
        let pred = map(3, 1, &[(0, 2.0)]);
        let gt = map(3, 1, &[(0, 2.0), (1, 9.0)]);
        let r = metrics(&pred, &gt).unwrap();
        assert_eq!(r.evaluated_pixels, 1);
        assert_eq!(r.rmse, 0.0);
        assert!(metrics(&map(3, 1, &[(2, 1.0)]), &gt).is_err());
    }

    #[test]
    fn metric_errors() {
        let gt = map(3, 1, &[(0, 2.0)]);
        assert!(matches!(
            metrics(&map(2, 1, &[(0, 1.0)]), &gt),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(metrics(&gt, &map(3, 1, &[])).is_err());
    }

    #[test]
    fn crop_skips_top_rows() {
        let pred = map(1, 2, &[(0, 5.0), (1, 2.0)]);
        let gt = map(1, 2, &[(0, 1.0), (1, 2.0)]);
        let acc = accumulate(&pred, &gt, 1).unwrap();
        assert_eq!(acc.count, 1);
        assert_eq!(acc.report().rmse, 0.0);
    }

    #[test]
    fn merged_sums_match_joint_evaluation() {
        let a_pred = map(2, 1, &[(0, 2.0), (1, 4.0)]);
        let a_gt = map(2, 1, &[(0, 1.0), (1, 2.0)]);
        let b_pred = map(2, 1, &[(0, 3.0)]);
        let b_gt = map(2, 1, &[(0, 3.5)]);
        let mut acc = accumulate(&a_pred, &a_gt, 0).unwrap();
        acc.merge(&accumulate(&b_pred, &b_gt, 0).unwrap());
        let joint_pred = map(4, 1, &[(0, 2.0), (1, 4.0), (2, 3.0)]);
        let joint_gt = map(4, 1, &[(0, 1.0), (1, 2.0), (2, 3.5)]);
        let joint = metrics(&joint_pred, &joint_gt).unwrap();
        let r = acc.report();
        assert!((r.rmse - joint.rmse).abs() < 1e-9);
        assert!((r.imae - joint.imae).abs() < 1e-9);
        assert_eq!(r.evaluated_pixels, 3);
    }

    proptest! {
        #[test]
        fn scale_covariance(
            cells in proptest::collection::vec((0.5f64..50.0, 0.5f64..50.0), 1..40),
            c in 0.1f64..10.0,
        ) {
            let n = cells.len();
            let pred = map(n, 1, &cells.iter().enumerate().map(|(i, c)| (i, c.0)).collect::<Vec<_>>());
            let gt = map(n, 1, &cells.iter().enumerate().map(|(i, c)| (i, c.1)).collect::<Vec<_>>());
            let spred = map(n, 1, &cells.iter().enumerate().map(|(i, p)| (i, p.0 * c)).collect::<Vec<_>>());
            let sgt = map(n, 1, &cells.iter().enumerate().map(|(i, p)| (i, p.1 * c)).collect::<Vec<_>>());
            let a = metrics(&pred, &gt).unwrap();
            let b = metrics(&spred, &sgt).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-12);
            prop_assert!(close(b.rmse, a.rmse * c));
            prop_assert!(close(b.mae, a.mae * c));
            prop_assert!(close(b.irmse, a.irmse / c));
            prop_assert!(close(b.imae, a.imae / c));
            let z = metrics(&pred, &pred).unwrap();
            prop_assert_eq!((z.rmse, z.mae, z.irmse, z.imae), (0.0, 0.0, 0.0, 0.0));
        }
    }

    fn lined_scan(lines: usize, per_line: usize) -> LidarScan {
        let mut pts = Vec::new();
        let mut idx = Vec::new();
        for k in 0..per_line {
            for l in 0..lines {
                pts.push(Vec3::new(10.0, k as f64, l as f64 * 0.1));
                idx.push(l as u16);
            }
        }
        LidarScan::new(pts, Some(idx), Some(lines)).unwrap()
    }

    #[test]
    fn sparsify_to_64_is_identity() {
        let s = lined_scan(64, 3);
        assert_eq!(sparsify(&s, 64, 0).unwrap(), s);
    }

    #[test]
    fn sparsify_keeps_even_lines() {
        let s = lined_scan(64, 3);
        let t = sparsify(&s, 32, 0).unwrap();
        assert_eq!(t.num_lines, Some(32));
        assert_eq!(t.len(), 96);
        let kept: std::collections::BTreeSet<u64> = t.points.iter().map(|p| (p.z * 10.0).round() as u64).collect();
        assert_eq!(kept, (0..64).step_by(2).collect());
        // Order is preserved.
        assert_eq!(t.points[0], s.points[0]);
        assert_eq!(t.points[1], s.points[2]);
    }

    #[test]
    fn sparsify_composes() {
        let s = lined_scan(64, 5);
        assert_eq!(
            sparsify(&sparsify(&s, 32, 0).unwrap(), 16, 0).unwrap(),
            sparsify(&s, 16, 0).unwrap()
        );
    }

    #[test]
    fn sparsify_needs_lines() {
        let s = LidarScan::unordered(vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(sparsify(&s, 32, 0), Err(Error::MissingLineIndex)));
        assert!(sparsify(&lined_scan(64, 1), 48, 0).is_err());
    }

    #[test]
    fn stats_dense_input_is_all_zero_distance() {
        let cells: Vec<_> = (0..12).map(|i| (i, 3.0)).collect();
        let m = map(4, 3, &cells);
        let s = nearest_stats(&m, &m).unwrap();
        assert_eq!(s.fraction[0], 1.0);
        assert!(s.fraction[1..].iter().all(|&f| f == 0.0));
        assert_eq!(s.raw_error_mm[0], Some(0.0));
    }

    #[test]
    fn stats_checkerboard_matches_enumeration() {
        let w = 8;
        let seeds: Vec<_> = (0..64).filter(|i| (i % w + i / w) % 2 == 0).map(|i| (i, 2.0)).collect();
        let sparse = map(8, 8, &seeds);
        let gt = map(8, 8, &(0..64).map(|i| (i, 2.5)).collect::<Vec<_>>());
        let s = nearest_stats(&sparse, &gt).unwrap();
        // Enumerate: every pixel's nearest seed by exhaustive search.
        let mut hist = vec![0usize; STATS_MAX_DISTANCE + 2];
        for p in 0..64usize {
            let d = seeds
                .iter()
                .map(|&(q, _)| (q % w).abs_diff(p % w) + (q / w).abs_diff(p / w))
                .min()
                .unwrap();
            hist[d] += 1;
        }
        for (b, &n) in hist.iter().enumerate() {
            assert!((s.fraction[b] - n as f64 / 64.0).abs() < 1e-12);
        }
        assert_eq!(s.fraction[0], 0.5);
        assert_eq!(s.fraction[1], 0.5);
        assert!((s.fraction.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(s.raw_error_mm[1], Some(500.0));
        assert_eq!(s.gt_seed_error_mm[1], Some(0.0));
    }
}
