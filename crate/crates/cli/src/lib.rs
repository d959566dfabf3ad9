//! Command-line front end: batch completion, evaluation, ablation,
//! sparsification, statistics, rendering and synthetic data generation.

pub mod frames;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use surfdepth::completion::{run_pipeline, stage_accumulators, ABLATION_STEPS};
use surfdepth::dataset_io::{
    read_depth_png, read_lidar_bin, render_depth, render_error, render_mask, render_normals, write_calibration, write_depth_png,
    write_lidar_bin,
};
use surfdepth::evaluation::{accumulate, nearest_stats, sparsify, STATS_MAX_DISTANCE};
use surfdepth::geometry::project_scan;
use surfdepth::synthscene::{render_scan, render_truth, SceneFile};
use surfdepth::{complete, CameraIntrinsics, DtMetric, EvalAccumulator, EvalReport, LidarScan, PipelineConfig, RigidTransform};

use frames::{list_frames, load_calibration, pair_frames, CAM_CALIB, LIDAR_CALIB};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "surfdepth", version, about = "Learning-free LiDAR depth completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Complete every LiDAR sweep in a directory into a dense depth PNG.
    Complete {
        #[command(flatten)]
        io: ScanIo,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth PNG directory; adds per-frame scores to the manifest.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Directory for outlier-mask renders.
        #[arg(long)]
        mask_out: Option<PathBuf>,
        /// Directory for normal renders.
        #[arg(long)]
        normals_out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score predicted depth PNGs against ground truth.
    Evaluate {
        /// Predicted depth PNG directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for report.csv and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score every pipeline stage against ground truth.
    Ablate {
        #[command(flatten)]
        io: ScanIo,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Keep every k-th scan line to simulate a sparser sensor.
    Sparsify {
        #[arg(long)]
        input: PathBuf,
        /// Target line count.
        #[arg(long, value_parser = ["64", "32", "16"])]
        lines: String,
        /// First kept line.
        #[arg(long, default_value_t = 0)]
        phase: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Distance-to-nearest-seed statistics of the raw projection.
    Stats {
        #[command(flatten)]
        io: ScanIo,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Colorized renders of depth maps, errors, normals or outlier masks.
    Render {
        /// Depth PNGs for `depth`/`error`, LiDAR sweeps for `normal`/`mask`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderMode::Depth)]
        mode: RenderMode,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Error magnitude (m) at full color saturation.
        #[arg(long, default_value_t = 2.0)]
        max_error: f64,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Generate a synthetic dataset from a scene file.
    Synth {
        /// Scene TOML; the built-in example scene when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScanIo {
    /// LiDAR `.bin` file or directory of them.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory with calib_cam_to_cam.txt and calib_velo_to_cam.txt.
    #[arg(long)]
    pub calib: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Pipeline config TOML; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Line count of the input sweeps.
    #[arg(long, value_parser = ["64", "32", "16"])]
    pub lines: Option<String>,
    #[arg(long)]
    pub no_outlier_removal: bool,
    #[arg(long)]
    pub no_smooth: bool,
    #[arg(long)]
    pub dt_metric: Option<DtMetric>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Depth,
    Normal,
    Mask,
    Error,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            PipelineConfig::from_toml_str(&text).with_context(|| format!("invalid config {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

impl PipelineArgs {
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(l) = &self.lines {
            cfg.lidar_lines = l.parse()?;
        }
        if self.no_outlier_removal {
            cfg.outlier_removal = false;
        }
        if self.no_smooth {
            cfg.smooth_kernel = 1;
        }
        if let Some(m) = self.dt_metric {
            cfg.dt_metric = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.workers).build()?)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(0) => EXIT_OK,
        Ok(failed) => {
            eprintln!("{failed} frame(s) failed");
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    }
}

/// Runs a command; the value is the number of failed frames.
pub fn run(cli: Cli) -> Result<usize> {
    match cli.command {
        Command::Complete {
            io,
            out,
            gt,
            mask_out,
            normals_out,
            pipeline,
        } => cmd_complete(&io, &out, gt.as_deref(), mask_out.as_deref(), normals_out.as_deref(), &pipeline),
        Command::Evaluate { input, gt, out, config } => cmd_evaluate(&input, &gt, out.as_deref(), config.as_deref()),
        Command::Ablate { io, gt, out, pipeline } => cmd_ablate(&io, &gt, out.as_deref(), &pipeline),
        Command::Sparsify {
            input,
            lines,
            phase,
            out,
            config,
        } => cmd_sparsify(&input, lines.parse()?, phase, &out, config.as_deref()),
        Command::Stats { io, gt, out, pipeline } => cmd_stats(&io, &gt, out.as_deref(), &pipeline),
        Command::Render {
            input,
            mode,
            gt,
            calib,
            out,
            max_error,
            pipeline,
        } => cmd_render(&input, mode, gt.as_deref(), calib.as_deref(), &out, max_error, &pipeline),
        Command::Synth { input, out } => cmd_synth(input.as_deref(), &out),
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub wall_ms: f64,
    pub error: Option<String>,
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub frames: Vec<FrameRecord>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub aggregate: Option<EvalReport>,
}

impl RunManifest {
    fn new(command: &str, config: &PipelineConfig, input: &Path) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            input: input.to_path_buf(),
            output: None,
            calib: None,
            ground_truth: None,
            frames: Vec::new(),
            mean_ms: 0.0,
            median_ms: 0.0,
            aggregate: None,
        }
    }

    fn finish_timing(&mut self) {
        let mut t: Vec<f64> = self.frames.iter().filter(|f| f.error.is_none()).map(|f| f.wall_ms).collect();
        if t.is_empty() {
            return;
        }
        t.sort_by(f64::total_cmp);
        self.mean_ms = t.iter().sum::<f64>() / t.len() as f64;
        self.median_ms = if t.len() % 2 == 1 {
            t[t.len() / 2]
        } else {
            0.5 * (t[t.len() / 2 - 1] + t[t.len() / 2])
        };
    }

    fn failures(&self) -> usize {
        self.frames.iter().filter(|f| f.error.is_some()).count()
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("cannot write {}", path.display()))
    }

    fn print_failures(&self) {
        for f in &self.frames {
            if let Some(e) = &f.error {
                eprintln!("frame {} failed: {e}", f.frame_id);
            }
        }
    }
}

pub const REPORT_COLUMNS: [&str; 7] = ["frame_id", "rmse", "mae", "irmse", "imae", "density", "keep_ratio"];

fn report_row(id: &str, r: &EvalReport) -> String {
    format!(
        "{id},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6}",
        r.rmse, r.mae, r.irmse, r.imae, r.density, r.keep_ratio
    )
}

/// CSV table, one row per scored frame and the aggregate last.
pub fn report_table(frames: &[FrameRecord], aggregate: &EvalReport) -> String {
    let mut s = REPORT_COLUMNS.join(",");
    s.push('\n');
    for f in frames {
        if let Some(r) = &f.report {
            s.push_str(&report_row(&f.frame_id, r));
            s.push('\n');
        }
    }
    s.push_str(&report_row("aggregate", aggregate));
    s.push('\n');
    s
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label}: rmse {:.2} mm, mae {:.2} mm, irmse {:.2} 1/km, imae {:.2} 1/km, density {:.2}%, keep {:.2}%, pixels {}",
        r.rmse,
        r.mae,
        r.irmse,
        r.imae,
        100.0 * r.density,
        100.0 * r.keep_ratio,
        r.evaluated_pixels
    );
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_scan(path: &Path, cfg: &PipelineConfig) -> Result<LidarScan> {
    Ok(read_lidar_bin(path)?.with_elevation_lines(cfg.lidar_lines)?)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

// ---------------------------------------------------------------------------
// Commands

struct Calibrated {
    intr: CameraIntrinsics,
    extr: RigidTransform,
}

fn calibrate(io: &ScanIo) -> Result<Calibrated> {
    let (intr, extr) = load_calibration(&io.calib)?;
    Ok(Calibrated { intr, extr })
}

pub fn cmd_complete(
    io: &ScanIo,
    out: &Path,
    gt: Option<&Path>,
    mask_out: Option<&Path>,
    normals_out: Option<&Path>,
    pipeline: &PipelineArgs,
) -> Result<usize> {
    // Everything that can fail up front is checked before any output.
    let cfg = pipeline.config()?;
    let cal = calibrate(io)?;
    let scans = list_frames(&io.input, "bin")?;
    let jobs: Vec<(String, PathBuf, Option<PathBuf>)> = match gt {
        Some(g) => pair_frames(scans, list_frames(g, "png")?, "input", "gt")?
            .into_iter()
            .map(|(s, a, b)| (s, a, Some(b)))
            .collect(),
        None => scans.into_iter().map(|f| (f.stem, f.path, None)).collect(),
    };
    let pool = pipeline.pool()?;
    for d in [Some(out), mask_out, normals_out].into_iter().flatten() {
        create_dir(d)?;
    }

    let results: Vec<(FrameRecord, EvalAccumulator)> = pool.install(|| {
        jobs.par_iter()
            .map(|(stem, scan_path, gt_path)| {
                let mut acc = EvalAccumulator::default();
                let mut wall_ms = 0.0;
                let res = (|| -> Result<Option<EvalReport>> {
                    let scan = load_scan(scan_path, &cfg)?;
                    let gt_map = gt_path.as_deref().map(read_depth_png).transpose()?;
                    let t = Instant::now();
                    let c = complete(&scan, &cal.extr, &cal.intr, &cfg)?;
                    wall_ms = elapsed_ms(t);
                    write_depth_png(&c.dense, &out.join(format!("{stem}.png")))?;
                    if let Some(d) = mask_out {
                        render_mask(&c.mask).write_png(&d.join(format!("{stem}.png")))?;
                    }
                    if let Some(d) = normals_out {
                        render_normals(&c.normals).write_png(&d.join(format!("{stem}.png")))?;
                    }
                    Ok(match gt_map {
                        Some(g) => {
                            let kept = (c.mask.total - c.mask.removed.len()) as u64;
                            acc = accumulate(&c.dense, &g, cfg.eval_crop_top)?.with_keep(kept, c.mask.total as u64);
                            Some(acc.report())
                        }
                        None => None,
                    })
                })();
                let (report, error) = match res {
                    Ok(r) => (r, None),
                    Err(e) => (None, Some(format!("{e:#}"))),
                };
                (
                    FrameRecord {
                        frame_id: stem.clone(),
                        wall_ms,
                        error,
                        report,
                    },
                    acc,
                )
            })
            .collect()
    });

    let mut manifest = RunManifest::new("complete", &cfg, &io.input);
    manifest.output = Some(out.to_path_buf());
    manifest.calib = Some(io.calib.clone());
    manifest.ground_truth = gt.map(Path::to_path_buf);
    let mut total = EvalAccumulator::default();
    for (rec, acc) in results {
        total.merge(&acc);
        manifest.frames.push(rec);
    }
    manifest.finish_timing();
    if gt.is_some() && total.count > 0 {
        manifest.aggregate = Some(total.report());
    }
    manifest.write(out)?;
    manifest.print_failures();
    let done = manifest.frames.len() - manifest.failures();
    println!(
        "completed {done}/{} frames: mean {:.2} ms, median {:.2} ms per frame",
        manifest.frames.len(),
        manifest.mean_ms,
        manifest.median_ms
    );
    if let Some(r) = &manifest.aggregate {
        print_report("aggregate", r);
    }
    Ok(manifest.failures())
}

pub fn cmd_evaluate(input: &Path, gt: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<usize> {
    let cfg = load_config(config)?;
    let pairs = pair_frames(list_frames(input, "png")?, list_frames(gt, "png")?, "input", "gt")?;
    let mut manifest = RunManifest::new("evaluate", &cfg, input);
    manifest.ground_truth = Some(gt.to_path_buf());
    manifest.output = out.map(Path::to_path_buf);
    let mut total = EvalAccumulator::default();
    for (stem, p, g) in pairs {
        let t = Instant::now();
        let res = (|| -> Result<EvalAccumulator> {
            let pred = read_depth_png(&p)?;
            let gt_map = read_depth_png(&g)?;
            Ok(accumulate(&pred, &gt_map, cfg.eval_crop_top)?)
        })();
        let (report, error) = match res {
            Ok(acc) => {
                total.merge(&acc);
                (Some(acc.report()), None)
            }
            Err(e) => (None, Some(format!("{e:#}"))),
        };
        manifest.frames.push(FrameRecord {
            frame_id: stem,
            wall_ms: elapsed_ms(t),
            error,
            report,
        });
    }
    finish_scored(manifest, total, out)
}

fn finish_scored(mut manifest: RunManifest, total: EvalAccumulator, out: Option<&Path>) -> Result<usize> {
    manifest.finish_timing();
    manifest.print_failures();
    if total.count == 0 {
        bail!("no frame had a pixel valid in both prediction and ground truth");
    }
    let agg = total.report();
    manifest.aggregate = Some(agg);
    let table = report_table(&manifest.frames, &agg);
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        std::fs::write(dir.join("report.csv"), &table)?;
        manifest.write(dir)?;
    }
    Ok(manifest.failures())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationLine {
    pub step: String,
    pub report: EvalReport,
}

pub fn cmd_ablate(io: &ScanIo, gt: &Path, out: Option<&Path>, pipeline: &PipelineArgs) -> Result<usize> {
    let cfg = pipeline.config()?;
    let cal = calibrate(io)?;
    let pairs = pair_frames(list_frames(&io.input, "bin")?, list_frames(gt, "png")?, "input", "gt")?;
    let pool = pipeline.pool()?;
    let results: Vec<(String, Result<Vec<EvalAccumulator>>)> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(stem, scan_path, gt_path)| {
                let res = (|| -> Result<Vec<EvalAccumulator>> {
                    let scan = load_scan(scan_path, &cfg)?;
                    let gt_map = read_depth_png(gt_path)?;
                    let stages = run_pipeline(&scan, &cal.extr, &cal.intr, &cfg)?;
                    Ok(stage_accumulators(&stages, &gt_map, cfg.eval_crop_top)?)
                })();
                (stem.clone(), res)
            })
            .collect()
    });
    let mut rows = vec![EvalAccumulator::default(); ABLATION_STEPS.len()];
    let mut failed = 0;
    for (stem, res) in results {
        match res {
            Ok(accs) => rows.iter_mut().zip(&accs).for_each(|(r, a)| r.merge(a)),
            Err(e) => {
                failed += 1;
                eprintln!("frame {stem} failed: {e:#}");
            }
        }
    }
    if rows[0].count == 0 {
        bail!("no frame could be scored");
    }
    let lines: Vec<AblationLine> = ABLATION_STEPS
        .iter()
        .zip(&rows)
        .map(|(s, a)| AblationLine {
            step: s.to_string(),
            report: a.report(),
        })
        .collect();
    let mut table = String::from("step,rmse,mae,irmse,imae,density_pct,keep_ratio_pct\n");
    for l in &lines {
        let r = &l.report;
        table.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
            l.step,
            r.rmse,
            r.mae,
            r.irmse,
            r.imae,
            100.0 * r.density,
            100.0 * r.keep_ratio
        ));
    }
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        std::fs::write(dir.join("ablation.csv"), &table)?;
        let json = serde_json::json!({ "command": "ablate", "config": cfg, "input": io.input, "calib": io.calib,
            "ground_truth": gt, "rows": lines });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&json)?)?;
    }
    Ok(failed)
}

pub fn cmd_sparsify(input: &Path, lines: usize, phase: usize, out: &Path, config: Option<&Path>) -> Result<usize> {
    let cfg = load_config(config)?;
    if cfg.lidar_lines % lines != 0 || lines > cfg.lidar_lines {
        bail!("{lines} lines does not evenly divide the {}-line input", cfg.lidar_lines);
    }
    if phase >= cfg.lidar_lines / lines {
        bail!("phase {phase} must be below the line step {}", cfg.lidar_lines / lines);
    }
    let scans = list_frames(input, "bin")?;
    create_dir(out)?;
    let mut failed = 0;
    for f in scans {
        let res = (|| -> Result<()> {
            let scan = load_scan(&f.path, &cfg)?;
            write_lidar_bin(&sparsify(&scan, lines, phase)?, &out.join(format!("{}.bin", f.stem)))?;
            Ok(())
        })();
        if let Err(e) = res {
            failed += 1;
            eprintln!("frame {} failed: {e:#}", f.stem);
        }
    }
    Ok(failed)
}

pub fn cmd_stats(io: &ScanIo, gt: &Path, out: Option<&Path>, pipeline: &PipelineArgs) -> Result<usize> {
    let cfg = pipeline.config()?;
    let cal = calibrate(io)?;
    let pairs = pair_frames(list_frames(&io.input, "bin")?, list_frames(gt, "png")?, "input", "gt")?;
    let bins = STATS_MAX_DISTANCE + 2;
    let mut pixels = vec![0u64; bins];
    let mut raw = vec![0.0; bins];
    let mut sub = vec![0.0; bins];
    let mut failed = 0;
    for (stem, scan_path, gt_path) in pairs {
        let res = (|| -> Result<_> {
            let scan = load_scan(&scan_path, &cfg)?;
            let sparse = project_scan(&scan, &cal.extr, &cal.intr, cfg.max_range);
            Ok(nearest_stats(&sparse, &read_depth_png(&gt_path)?)?)
        })();
        match res {
            Ok(s) => {
                for b in 0..bins {
                    let n = s.pixels[b] as f64;
                    pixels[b] += s.pixels[b];
                    raw[b] += s.raw_error_mm[b].unwrap_or(0.0) * n;
                    sub[b] += s.gt_seed_error_mm[b].unwrap_or(0.0) * n;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("frame {stem} failed: {e:#}");
            }
        }
    }
    let total: u64 = pixels.iter().sum();
    if total == 0 {
        bail!("no ground-truth pixel in any frame");
    }
    let mut table = String::from("l1_distance,fraction,raw_error_mm,gt_seed_error_mm\n");
    for b in 0..bins {
        let label = if b > STATS_MAX_DISTANCE {
            format!(">{STATS_MAX_DISTANCE}")
        } else {
            b.to_string()
        };
        let mean = |s: &[f64]| {
            if pixels[b] == 0 {
                String::new()
            } else {
                format!("{:.2}", s[b] / pixels[b] as f64)
            }
        };
        table.push_str(&format!(
            "{label},{:.6},{},{}\n",
            pixels[b] as f64 / total as f64,
            mean(&raw),
            mean(&sub)
        ));
    }
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        std::fs::write(dir.join("stats.csv"), &table)?;
        let json = serde_json::json!({ "command": "stats", "config": cfg, "input": io.input, "calib": io.calib,
            "ground_truth": gt, "pixels": pixels });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&json)?)?;
    }
    Ok(failed)
}

pub fn cmd_render(
    input: &Path,
    mode: RenderMode,
    gt: Option<&Path>,
    calib: Option<&Path>,
    out: &Path,
    max_error: f64,
    pipeline: &PipelineArgs,
) -> Result<usize> {
    let cfg = pipeline.config()?;
    if max_error.is_nan() || max_error <= 0.0 {
        bail!("--max-error must be positive");
    }
    let jobs: Vec<(String, PathBuf, Option<PathBuf>)> = match mode {
        RenderMode::Depth => list_frames(input, "png")?.into_iter().map(|f| (f.stem, f.path, None)).collect(),
        RenderMode::Error => {
            let gt = gt.context("--gt is required for error renders")?;
            pair_frames(list_frames(input, "png")?, list_frames(gt, "png")?, "input", "gt")?
                .into_iter()
                .map(|(s, a, b)| (s, a, Some(b)))
                .collect()
        }
        RenderMode::Normal | RenderMode::Mask => list_frames(input, "bin")?.into_iter().map(|f| (f.stem, f.path, None)).collect(),
    };
    let cal = match mode {
        RenderMode::Normal | RenderMode::Mask => Some(load_calibration(calib.context("--calib is required for this mode")?)?),
        _ => None,
    };
    create_dir(out)?;
    let mut failed = 0;
    for (stem, path, gt_path) in jobs {
        let res = (|| -> Result<()> {
            let img = match mode {
                RenderMode::Depth => render_depth(&read_depth_png(&path)?, cfg.max_range),
                RenderMode::Error => render_error(
                    &read_depth_png(&path)?,
                    &read_depth_png(gt_path.as_deref().expect("paired"))?,
                    max_error,
                )?,
                RenderMode::Normal | RenderMode::Mask => {
                    let (intr, extr) = cal.as_ref().expect("loaded");
                    let c = complete(&load_scan(&path, &cfg)?, extr, intr, &cfg)?;
                    if mode == RenderMode::Normal {
                        render_normals(&c.normals)
                    } else {
                        render_mask(&c.mask)
                    }
                }
            };
            img.write_png(&out.join(format!("{stem}.png")))?;
            Ok(())
        })();
        if let Err(e) = res {
            failed += 1;
            eprintln!("frame {stem} failed: {e:#}");
        }
    }
    Ok(failed)
}

/// Writes `velodyne/*.bin`, `groundtruth/*.png` and `calib/*` under `out`,
/// plus the scene file that produced them.
pub fn cmd_synth(input: Option<&Path>, out: &Path) -> Result<usize> {
    let scene = match input {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read scene {}", p.display()))?;
            SceneFile::from_toml_str(&text).with_context(|| format!("invalid scene {}", p.display()))?
        }
        None => SceneFile::example(),
    };
    let (velo, truth, calib) = (out.join("velodyne"), out.join("groundtruth"), out.join("calib"));
    for d in [&velo, &truth, &calib] {
        create_dir(d)?;
    }
    std::fs::write(out.join("scene.toml"), scene.to_toml_string())?;
    let first = scene.frame(0)?;
    write_calibration(&scene.camera, &first.extrinsics(), &calib.join(CAM_CALIB), &calib.join(LIDAR_CALIB))?;
    for k in 0..scene.frames {
        let spec = scene.frame(k)?;
        let stem = format!("{k:06}");
        write_lidar_bin(&render_scan(&spec)?.scan, &velo.join(format!("{stem}.bin")))?;
        let t = render_truth(&spec, &scene.camera, &spec.camera_pose, scene.max_range)?;
        write_depth_png(&t.to_sparse(), &truth.join(format!("{stem}.png")))?;
    }
    println!("wrote {} synthetic frames to {}", scene.frames, out.display());
    Ok(0)
}
