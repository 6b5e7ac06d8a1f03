//! Rigid-body math, pinhole projection, and oriented bounding boxes.

mod camera;
mod hull;
mod obb;
mod se3;

pub use camera::{back_project, camera_to_world, project_to_pixel, world_to_camera, CameraIntrinsics, Projection};
pub use hull::{convex_hull, min_area_rect_direction, polygon_area};
pub use obb::{
    centroid_distance, fit_obb, fit_upright_obb, obb_iou, obb_iou_with_resolution, obbs_separated, Obb, DEFAULT_IOU_SAMPLES,
    MIN_EXTENT,
};
pub use se3::{
    invert_pose, orthonormalize, perturb_pose, rotation_angle, sample_twist, se3_exp, se3_log, Pose, PoseNoiseModel,
    SplitMix64, Twist, LOG_PI_MARGIN,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },
    #[error("pose noise covariance is not symmetric positive semi-definite")]
    CovarianceNotPsd,
    #[error("depth must be positive, got {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("pixel ({u}, {v}) is outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("matrix is not a rotation (orthonormality error {orthonormality}, det {det})")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("box extents must be positive")]
    NonPositiveExtent,
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("look-at direction is degenerate")]
    DegenerateLookAt,
}
