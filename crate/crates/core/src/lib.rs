//! Learning-free depth completion from a LiDAR sweep and a calibrated camera.
//!
//! The pipeline projects the sweep into the image, drops background points
//! that leak through foreground objects, estimates surface normals on a
//! spherical range image, fills every pixel from its nearest seed by a
//! distance transform, corrects each fill by assuming the seed's tangent
//! plane continues, and finally smooths the result.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod config;
pub mod dataset_io;
pub mod dt;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod normals;
pub mod outlier;
pub mod synthscene;

pub use completion::{complete, run_pipeline, Completion, DenseDepthMap, PipelineStages};
pub use config::PipelineConfig;
pub use dt::{nearest_field, DtMetric, NearestField};
pub use error::{Error, Result};
pub use evaluation::{metrics, EvalAccumulator, EvalReport, NearestStats};
pub use geometry::{CameraIntrinsics, DepthGrid, LidarScan, RigidTransform, SparseDepthMap, Vec3};
pub use normals::NormalMap;
pub use outlier::{remove_outliers, OutlierMask, SensorSpec};
