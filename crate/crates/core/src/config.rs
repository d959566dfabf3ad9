use serde::{Deserialize, Serialize};

use crate::dt::DtMetric;
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_MAX_RANGE;
use crate::normals::NormalOptions;
use crate::outlier::DEFAULT_EPSILON;

/// Every tunable of the completion pipeline. Defaults reproduce the
/// reference setup: ε = 1 m, Euclidean transform, 5×5 Gaussian with σ = 1,
/// 512 azimuth columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Depth margin of the outlier test, meters.
    pub epsilon: f64,
    pub outlier_removal: bool,
    pub dt_metric: DtMetric,
    /// Odd Gaussian kernel size in pixels; 1 disables smoothing.
    pub smooth_kernel: usize,
    pub smooth_sigma: f64,
    /// Write the raw seed depths back after smoothing.
    pub preserve_seeds: bool,
    /// Residual denominators below this magnitude fall back to the seed depth.
    pub denom_guard: f64,
    pub max_range: f64,
    pub range_image_cols: usize,
    pub normal_max_gap: usize,
    pub smooth_derivatives: bool,
    pub fill_normals_in_range_image: bool,
    /// Line count assumed for scans that do not carry one.
    pub lidar_lines: usize,
    /// Rows skipped at the top of the image when scoring.
    pub eval_crop_top: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            outlier_removal: true,
            dt_metric: DtMetric::Euclidean,
            smooth_kernel: 5,
            smooth_sigma: 1.0,
            preserve_seeds: false,
            denom_guard: 1e-6,
            max_range: DEFAULT_MAX_RANGE,
            range_image_cols: 512,
            normal_max_gap: 3,
            smooth_derivatives: true,
            fill_normals_in_range_image: false,
            lidar_lines: 64,
            eval_crop_top: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.smooth_kernel == 0 || self.smooth_kernel.is_multiple_of(2) {
            return bad("smooth_kernel must be odd and at least 1");
        }
        if !(self.smooth_sigma > 0.0) {
            return bad("smooth_sigma must be positive");
        }
        if !(self.denom_guard > 0.0) {
            return bad("denom_guard must be positive");
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad("max_range must be positive and finite");
        }
        if self.range_image_cols < 4 {
            return bad("range_image_cols must be at least 4");
        }
        if self.lidar_lines == 0 {
            return bad("lidar_lines must be positive");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn normal_options(&self) -> NormalOptions {
        NormalOptions {
            max_gap: self.normal_max_gap,
            smooth_derivatives: self.smooth_derivatives,
            fill_in_range_image: self.fill_normals_in_range_image,
        }
    }
}
