//! Exact nearest-seed distance transform that keeps track of *which* seed is
//! nearest, not only how far away it is.
//!
//! Both metrics run as two separable passes (columns, then rows) in time
//! linear in the image size. Ties are broken toward the seed with the smaller
//! row, then the smaller column. To make that exact, every candidate carries
//! the integer key `M·d + rank`, where `d` is the squared Euclidean (or L1)
//! distance, `rank = ν·W + μ` is the seed's row-major index and `M = W·H`
//! exceeds every rank. Keys of distinct seeds never collide, so the
//! Euclidean lower envelope of parabolas `M·(x - q)² + h(q)` has no ties at
//! integer positions and the L1 sweeps need no special casing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SparseDepthMap, Vec3};
use crate::normals::NormalMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtMetric {
    #[default]
    Euclidean,
    L1,
}

impl DtMetric {
    pub fn distance(self, dx: i64, dy: i64) -> f64 {
        match self {
            DtMetric::Euclidean => ((dx * dx + dy * dy) as f64).sqrt(),
            DtMetric::L1 => (dx.abs() + dy.abs()) as f64,
        }
    }

    fn cost(self, d: i64) -> i64 {
        match self {
            DtMetric::Euclidean => d * d,
            DtMetric::L1 => d.abs(),
        }
    }
}

impl std::str::FromStr for DtMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(DtMetric::Euclidean),
            "l1" | "manhattan" => Ok(DtMetric::L1),
            other => Err(format!("unknown distance metric `{other}` (expected euclidean or l1)")),
        }
    }
}

const NONE: u32 = u32::MAX;

/// For every pixel of a `width × height` grid, the row-major index of its
/// nearest occupied pixel. `None` when nothing is occupied.
pub fn nearest_seeds(width: usize, height: usize, occupied: &[bool], metric: DtMetric) -> Option<Vec<u32>> {
    assign_seeds(width, height, occupied, metric).map(|(seed, _)| seed)
}

type Assignment = (Vec<u32>, Vec<(i32, i32)>);

/// Nearest seed of every pixel and the `(Δμ, Δν)` pointing at it.
fn assign_seeds(width: usize, height: usize, occupied: &[bool], metric: DtMetric) -> Option<Assignment> {
    assert_eq!(occupied.len(), width * height, "occupancy grid size");
    if !occupied.iter().any(|&o| o) {
        return None;
    }
    let m = (width * height) as i64;

    // Column pass: row of the nearest seed within each column. On equal
    // distance the seed above wins, having the smaller row. Both sweeps walk
    // rows so memory is touched in order.
    let mut col_row = vec![NONE; width * height];
    let mut last = vec![NONE; width];
    for y in 0..height {
        let row = y * width;
        for x in 0..width {
            if occupied[row + x] {
                last[x] = y as u32;
            }
            col_row[row + x] = last[x];
        }
    }
    last.fill(NONE);
    for y in (0..height).rev() {
        let row = y * width;
        for x in 0..width {
            if occupied[row + x] {
                last[x] = y as u32;
            }
            let (above, below) = (col_row[row + x], last[x]);
            if below != NONE && (above == NONE || below as usize - y < y - above as usize) {
                col_row[row + x] = below;
            }
        }
    }

    // Row pass over keys M·cost(dy) + rank; `winner[x]` is the column whose
    // seed is nearest to (x, y).
    let mut seeds = vec![NONE; width * height];
    let mut offsets = vec![(0, 0); width * height];
    let mut keys = vec![i64::MAX; width];
    let mut winner = vec![usize::MAX; width];
    let mut envelope = Envelope::with_capacity(width);
    let mut best = vec![(i64::MAX, usize::MAX); width];
    for y in 0..height {
        let row = y * width;
        for (x, key) in keys.iter_mut().enumerate() {
            let r = col_row[row + x];
            *key = if r == NONE {
                i64::MAX
            } else {
                m * metric.cost(y as i64 - r as i64) + (r as usize * width + x) as i64
            };
        }
        match metric {
            DtMetric::Euclidean => {
                envelope.lower_envelope(&keys, m);
                envelope.assign(&mut winner);
            }
            DtMetric::L1 => l1_row(&keys, m, &mut best, &mut winner),
        }
        for (x, &c) in winner.iter().enumerate() {
            let r = col_row[row + c] as usize;
            seeds[row + x] = (r * width + c) as u32;
            offsets[row + x] = (c as i32 - x as i32, r as i32 - y as i32);
        }
    }
    Some((seeds, offsets))
}

/// Column of the nearest seed along one row under L1: a forward and a
/// backward sweep, each carrying the best key so far and charging `m` per
/// step.
fn l1_row(keys: &[i64], m: i64, best: &mut [(i64, usize)], out: &mut [usize]) {
    let mut run = (i64::MAX, usize::MAX);
    for x in 0..keys.len() {
        if run.1 != usize::MAX {
            run.0 += m;
        }
        if keys[x] < run.0 {
            run = (keys[x], x);
        }
        best[x] = run;
    }
    let mut run = (i64::MAX, usize::MAX);
    for x in (0..keys.len()).rev() {
        if run.1 != usize::MAX {
            run.0 += m;
        }
        if keys[x] < run.0 {
            run = (keys[x], x);
        }
        if run.0 < best[x].0 {
            best[x] = run;
        }
        out[x] = best[x].1;
    }
}

/// Lower envelope of parabolas `c·(x - q)² + h(q)` over integer `x`. Keys
/// never tie at integer positions, so each parabola owns a run of columns
/// that starts at an exact integer breakpoint.
struct Envelope {
    vertices: Vec<usize>,
    // First column where vertex k is the minimum.
    starts: Vec<i64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            starts: Vec::with_capacity(n),
        }
    }

    /// First integer x at which parabola `q > p` is below parabola `p`.
    fn overtake(h: &[i64], c: i64, p: usize, q: usize) -> i64 {
        let (pi, qi) = (p as i64, q as i64);
        let num = (h[q] + c * qi * qi) - (h[p] + c * pi * pi);
        let den = 2 * c * (qi - pi);
        num.div_euclid(den) + 1
    }

    fn lower_envelope(&mut self, h: &[i64], c: i64) {
        self.vertices.clear();
        self.starts.clear();
        for q in 0..h.len() {
            if h[q] == i64::MAX {
                continue;
            }
            loop {
                let Some(&top) = self.vertices.last() else {
                    self.vertices.push(q);
                    self.starts.push(i64::MIN);
                    break;
                };
                let s = Self::overtake(h, c, top, q);
                if s <= *self.starts.last().unwrap() {
                    self.vertices.pop();
                    self.starts.pop();
                } else {
                    self.vertices.push(q);
                    self.starts.push(s);
                    break;
                }
            }
        }
    }

    fn assign(&self, out: &mut [usize]) {
        let mut k = 0;
        for (x, slot) in out.iter_mut().enumerate() {
            while k + 1 < self.vertices.len() && self.starts[k + 1] <= x as i64 {
                k += 1;
            }
            *slot = self.vertices[k];
        }
    }
}

/// Per-pixel nearest seed, its offset and distance, and the seed's depth and
/// normal.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestField {
    pub width: usize,
    pub height: usize,
    pub metric: DtMetric,
    /// Row-major index of the nearest occupied pixel.
    pub seed: Vec<u32>,
    /// `(Δμ, Δν)` from each pixel to its seed.
    pub offsets: Vec<(i32, i32)>,
    pub distance: Vec<f64>,
    pub seed_depth: Vec<f64>,
    pub seed_normal: Vec<Option<Vec3>>,
}

impl NearestField {
    /// `(Δμ, Δν)` such that the seed sits at `(μ + Δμ, ν + Δν)`.
    pub fn offset(&self, idx: usize) -> (i64, i64) {
        let (du, dv) = self.offsets[idx];
        (du as i64, dv as i64)
    }

    pub fn seed_pixel(&self, idx: usize) -> (usize, usize) {
        let s = self.seed[idx] as usize;
        (s % self.width, s / self.width)
    }
}

pub fn nearest_field(sparse: &SparseDepthMap, normals: &NormalMap, metric: DtMetric) -> Result<NearestField> {
    if (normals.width, normals.height) != (sparse.width, sparse.height) {
        return Err(Error::DimensionMismatch {
            expected: (sparse.width, sparse.height),
            actual: (normals.width, normals.height),
        });
    }
    let (seed, offsets) = assign_seeds(sparse.width, sparse.height, &sparse.occupancy(), metric)
        .ok_or_else(|| Error::Empty("distance transform needs at least one occupied pixel".into()))?;
    let distance = offsets.iter().map(|&(du, dv)| metric.distance(du as i64, dv as i64)).collect();
    let seed_depth = seed
        .iter()
        .map(|&s| sparse.depth[s as usize].expect("seed pixel is occupied"))
        .collect();
    let seed_normal = seed.iter().map(|&s| normals.normals[s as usize]).collect();
    Ok(NearestField {
        width: sparse.width,
        height: sparse.height,
        metric,
        seed,
        offsets,
        distance,
        seed_depth,
        seed_normal,
    })
}
