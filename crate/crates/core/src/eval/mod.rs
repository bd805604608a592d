//! Camera geometry, accuracy metrics and the ablation studies.

pub mod camera;
pub mod metrics;
pub mod quant;
pub mod rootnoise;
pub mod sweep;

pub use camera::{CameraModel, DEPTH_RANGE_MM};
pub use metrics::{error_2d, joint_errors, mpjpe, pck_auc, pck_auc_from_errors, pck_thresholds};
