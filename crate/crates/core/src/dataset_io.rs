//! KITTI-style file formats: 16-bit depth PNGs, calibration text files,
//! Velodyne binaries, and 8-bit color renders.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthGrid, LidarScan, RigidTransform, SparseDepthMap, Vec3};
use crate::normals::NormalMap;
use crate::outlier::OutlierMask;

/// Largest depth a 16-bit PNG can hold, meters.
pub const MAX_PNG_DEPTH: f64 = 65535.0 / 256.0;

/// Bytes per Velodyne record: four little-endian `f32` (x, y, z, reflectance).
pub const LIDAR_RECORD_BYTES: usize = 16;

/// Image size assumed when the calibration file carries no `S_rect` entry.
pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (1242, 375);

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Depth PNG

pub fn decode_depth_png(bytes: &[u8], path: &Path) -> Result<SparseDepthMap> {
    let fail = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(fail)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, format!("bit depth is {} (expected 16)", depth as u8)));
    }
    if color != png::ColorType::Grayscale {
        return Err(Error::format(
            path,
            format!("color type is {color:?} (expected single-channel Grayscale)"),
        ));
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(fail)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let line = frame.line_size;
    reader.finish().map_err(fail)?;
    let mut map = SparseDepthMap::new(w, h);
    for y in 0..h {
        let row = &buf[y * line..y * line + 2 * w];
        for x in 0..w {
            let raw = u16::from_be_bytes([row[2 * x], row[2 * x + 1]]);
            if raw != 0 {
                map.depth[y * w + x] = Some(raw as f64 / 256.0);
            }
        }
    }
    Ok(map)
}

pub fn read_depth_png(path: &Path) -> Result<SparseDepthMap> {
    decode_depth_png(&read_bytes(path)?, path)
}

/// Raw 16-bit value of a depth: `round_ties_even(depth·256)`.
pub fn quantize_depth(depth: f64) -> Result<u16> {
    if !(depth >= 0.0) {
        return Err(Error::invalid("depth", format!("{depth} is not a nonnegative number")));
    }
    let raw = (depth * 256.0).round_ties_even();
    if raw > 65535.0 {
        return Err(Error::DepthOverflow { depth, max: MAX_PNG_DEPTH });
    }
    Ok(raw as u16)
}

pub fn encode_depth_png<P: DepthGrid + ?Sized>(map: &P) -> Result<Vec<u8>> {
    let (w, h) = map.dims();
    let mut data = Vec::with_capacity(2 * w * h);
    for idx in 0..w * h {
        let raw = match map.depth_at(idx) {
            Some(d) => quantize_depth(d)?,
            None => 0,
        };
        data.extend_from_slice(&raw.to_be_bytes());
    }
    encode_png(w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn write_depth_png<P: DepthGrid + ?Sized>(map: &P, path: &Path) -> Result<()> {
    write_bytes(path, &encode_depth_png(map)?)
}

fn encode_png(w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let dims = |v: usize| u32::try_from(v).map_err(|_| Error::invalid("image size", "exceeds u32"));
    let mut out = Vec::new();
    let enc_err = |e: png::EncodingError| Error::invalid("png", e.to_string());
    let mut enc = png::Encoder::new(&mut out, dims(w)?, dims(h)?);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(enc_err)?;
    writer.write_image_data(data).map_err(enc_err)?;
    writer.finish().map_err(enc_err)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Calibration

/// `KEY: v1 v2 ...` entries of a KITTI calibration file. Lines whose
/// values are not all numbers (e.g. `calib_time`) are kept out.
fn parse_keyed(text: &str) -> HashMap<String, Vec<f64>> {
    let mut out = HashMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else { continue };
        let vals: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse::<f64>).collect();
        if let Ok(vals) = vals {
            out.insert(key.trim().to_string(), vals);
        }
    }
    out
}

fn take<'a>(map: &'a HashMap<String, Vec<f64>>, path: &Path, key: &str, n: usize) -> Result<&'a [f64]> {
    let v = map.get(key).ok_or_else(|| Error::MissingKey {
        path: path.to_path_buf(),
        key: key.to_string(),
    })?;
    if v.len() != n {
        return Err(Error::format(path, format!("`{key}` has {} values (expected {n})", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::format(path, format!("`{key}` has a non-finite value")));
    }
    Ok(v)
}

fn take_any<'a>(map: &'a HashMap<String, Vec<f64>>, path: &Path, keys: &[&str], n: usize) -> Result<Option<&'a [f64]>> {
    match keys.iter().find(|k| map.contains_key(**k)) {
        Some(k) => take(map, path, k, n).map(Some),
        None => Ok(None),
    }
}

/// Which rectified camera to read (`P_rect_0{camera}`); the image size
/// override wins over the file's `S_rect` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibOptions {
    pub camera: u8,
    pub image_size: Option<(usize, usize)>,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            camera: 2,
            image_size: None,
        }
    }
}

/// Intrinsics and LiDAR → rectified camera extrinsics from the text of a
/// camera file and a LiDAR file.
pub fn parse_calibration(
    cam_text: &str,
    lidar_text: &str,
    cam_path: &Path,
    lidar_path: &Path,
    opts: &CalibOptions,
) -> Result<(CameraIntrinsics, RigidTransform)> {
    let cam = parse_keyed(cam_text);
    let p_key = format!("P_rect_0{}", opts.camera);
    let p_alt = format!("P{}", opts.camera);
    let p = take_any(&cam, cam_path, &[&p_key, &p_alt], 12)?.ok_or_else(|| Error::MissingKey {
        path: cam_path.to_path_buf(),
        key: p_key.clone(),
    })?;
    let p = Matrix3x4::from_row_slice(p);
    let (fu, fv, pu, pv) = (p[(0, 0)], p[(1, 1)], p[(0, 2)], p[(1, 2)]);
    if p[(2, 2)] != 1.0 || p[(1, 0)] != 0.0 || p[(2, 0)] != 0.0 || p[(2, 1)] != 0.0 {
        return Err(Error::format(
            cam_path,
            format!("`{p_key}` is not a rectified projection [K | K·t]"),
        ));
    }

    let size = match opts.image_size {
        Some(s) => s,
        None => match take_any(&cam, cam_path, &[&format!("S_rect_0{}", opts.camera)], 2)? {
            Some(s) => {
                if !(s[0] >= 1.0 && s[1] >= 1.0 && s[0] <= 1e6 && s[1] <= 1e6) {
                    return Err(Error::format(cam_path, "image size must be positive"));
                }
                (s[0] as usize, s[1] as usize)
            }
            None => DEFAULT_IMAGE_SIZE,
        },
    };
    let intr = CameraIntrinsics::new(fu, fv, pu, pv, size.0, size.1).map_err(|e| Error::format(cam_path, e.to_string()))?;

    let r_rect = match take_any(&cam, cam_path, &["R_rect_00", "R0_rect"], 9)? {
        Some(r) => RigidTransform::with_tolerance(Matrix3::from_row_slice(r), Vec3::zeros(), 1e-6)
            .map_err(|e| Error::format(cam_path, format!("`R_rect_00`: {e}")))?,
        None => RigidTransform::identity(),
    };
    // P = K·[I | t]; t moves the reference camera onto the chosen one.
    let tz = p[(2, 3)];
    let shift = RigidTransform {
        rotation: Matrix3::identity(),
        translation: Vec3::new((p[(0, 3)] - pu * tz) / fu, (p[(1, 3)] - pv * tz) / fv, tz),
    };

    let lidar = parse_keyed(lidar_text);
    let velo = if let Some(tr) = take_any(&lidar, lidar_path, &["Tr_velo_to_cam", "Tr"], 12)? {
        let m = Matrix3x4::from_row_slice(tr);
        let r: Matrix3<f64> = m.fixed_columns::<3>(0).into();
        RigidTransform::with_tolerance(r, m.column(3).into(), 1e-6)
    } else {
        let r = take(&lidar, lidar_path, "R", 9)?;
        let t = take(&lidar, lidar_path, "T", 3)?;
        RigidTransform::with_tolerance(Matrix3::from_row_slice(r), Vec3::from_row_slice(t), 1e-6)
    }
    .map_err(|e| Error::format(lidar_path, e.to_string()))?;

    Ok((intr, shift.compose(&r_rect.compose(&velo))))
}

pub fn read_calibration(cam_file: &Path, lidar_file: &Path, opts: &CalibOptions) -> Result<(CameraIntrinsics, RigidTransform)> {
    let text = |p: &Path| -> Result<String> { String::from_utf8(read_bytes(p)?).map_err(|_| Error::format(p, "not UTF-8 text")) };
    parse_calibration(&text(cam_file)?, &text(lidar_file)?, cam_file, lidar_file, opts)
}

fn fmt_values(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

/// Camera-file text holding `P_rect_02` and `S_rect_02` with no rectifying
/// rotation or camera offset.
pub fn format_camera_calibration(intr: &CameraIntrinsics) -> String {
    let p = [intr.fu, 0.0, intr.pu, 0.0, 0.0, intr.fv, intr.pv, 0.0, 0.0, 0.0, 1.0, 0.0];
    format!(
        "S_rect_02: {}\nR_rect_00: {}\nP_rect_02: {}\n",
        fmt_values([intr.width as f64, intr.height as f64]),
        fmt_values([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        fmt_values(p)
    )
}

pub fn format_lidar_calibration(extr: &RigidTransform) -> String {
    let r = extr.rotation;
    format!(
        "R: {}\nT: {}\n",
        fmt_values((0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)]))),
        fmt_values(extr.translation.iter().copied())
    )
}

pub fn write_calibration(intr: &CameraIntrinsics, extr: &RigidTransform, cam_file: &Path, lidar_file: &Path) -> Result<()> {
    write_bytes(cam_file, format_camera_calibration(intr).as_bytes())?;
    write_bytes(lidar_file, format_lidar_calibration(extr).as_bytes())
}

// ---------------------------------------------------------------------------
// LiDAR binaries

pub fn decode_lidar_bin(bytes: &[u8], path: &Path) -> Result<LidarScan> {
    let rem = bytes.len() % LIDAR_RECORD_BYTES;
    if rem != 0 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            offset: (bytes.len() - rem) as u64,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / LIDAR_RECORD_BYTES);
    for (k, rec) in bytes.chunks_exact(LIDAR_RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
        let p = Vec3::new(f(0), f(1), f(2));
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::format(
                path,
                format!("record {k} at byte offset {} has a non-finite coordinate", k * LIDAR_RECORD_BYTES),
            ));
        }
        points.push(p);
    }
    LidarScan::unordered(points)
}

pub fn read_lidar_bin(path: &Path) -> Result<LidarScan> {
    decode_lidar_bin(&read_bytes(path)?, path)
}

/// Coordinates are stored as `f32`; reflectance is written as 0.
pub fn encode_lidar_bin(scan: &LidarScan) -> Vec<u8> {
    let mut out = Vec::with_capacity(scan.len() * LIDAR_RECORD_BYTES);
    for p in &scan.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_lidar_bin(scan: &LidarScan, path: &Path) -> Result<()> {
    write_bytes(path, &encode_lidar_bin(scan))
}

// ---------------------------------------------------------------------------
// Color renders

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; 3 * width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, idx: usize, c: [u8; 3]) {
        self.data[3 * idx..3 * idx + 3].copy_from_slice(&c);
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Rgb, png::BitDepth::Eight, &self.data)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode_png()?)
    }
}

/// Depth colormap stops, near (index 0) to far. Colors are linearly
/// interpolated between stops.
pub const DEPTH_LUT: [[u8; 3]; 9] = [
    [252, 253, 191],
    [254, 176, 120],
    [241, 96, 93],
    [183, 55, 121],
    [114, 31, 129],
    [69, 16, 122],
    [35, 12, 80],
    [15, 8, 45],
    [4, 4, 20],
];

pub fn depth_color(depth: f64, max_range: f64) -> [u8; 3] {
    let t = (depth / max_range).clamp(0.0, 1.0) * (DEPTH_LUT.len() - 1) as f64;
    let k = (t.floor() as usize).min(DEPTH_LUT.len() - 2);
    let f = t - k as f64;
    let (a, b) = (DEPTH_LUT[k], DEPTH_LUT[k + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

fn unit_to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `(n + 1) / 2` mapped to 0..=255 per channel.
pub fn normal_color(n: &Vec3) -> [u8; 3] {
    [
        unit_to_byte((n.x + 1.0) / 2.0),
        unit_to_byte((n.y + 1.0) / 2.0),
        unit_to_byte((n.z + 1.0) / 2.0),
    ]
}

/// Blue for negative, white at zero, red for positive; saturates at
/// `±max_abs`.
pub fn error_color(err: f64, max_abs: f64) -> [u8; 3] {
    let t = (err / max_abs).clamp(-1.0, 1.0);
    let fade = unit_to_byte(1.0 - t.abs());
    if t < 0.0 {
        [fade, fade, 255]
    } else {
        [255, fade, fade]
    }
}

pub fn render_depth<P: DepthGrid + ?Sized>(map: &P, max_range: f64) -> RgbImage {
    let (w, h) = map.dims();
    let mut img = RgbImage::black(w, h);
    for idx in 0..w * h {
        if let Some(d) = map.depth_at(idx) {
            img.put(idx, depth_color(d, max_range));
        }
    }
    img
}

pub fn render_normals(normals: &NormalMap) -> RgbImage {
    let mut img = RgbImage::black(normals.width, normals.height);
    for (idx, n) in normals.normals.iter().enumerate() {
        if let Some(n) = n {
            img.put(idx, normal_color(n));
        }
    }
    img
}

pub fn render_mask(mask: &OutlierMask) -> RgbImage {
    let mut img = RgbImage::black(mask.width, mask.height);
    for (idx, &on) in mask.grid.iter().enumerate() {
        if on {
            img.put(idx, [255, 255, 255]);
        }
    }
    img
}

/// Signed `pred - gt` error over pixels valid in both maps.
pub fn render_error<P: DepthGrid + ?Sized>(pred: &P, gt: &SparseDepthMap, max_abs: f64) -> Result<RgbImage> {
    if pred.dims() != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch {
            expected: (gt.width, gt.height),
            actual: pred.dims(),
        });
    }
    let mut img = RgbImage::black(gt.width, gt.height);
    for (idx, g) in gt.depth.iter().enumerate() {
        if let (Some(g), Some(p)) = (g, pred.depth_at(idx)) {
            img.put(idx, error_color(p - g, max_abs));
        }
    }
    Ok(img)
}
