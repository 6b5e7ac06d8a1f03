//! Pinhole camera model.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::se3::{invert_pose, Pose};
use super::GeometryError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

/// `((u − cx)/fx · d, (v − cy)/fy · d, d)`
pub fn back_project(
    pixel: (f64, f64),
    depth: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NonPositiveDepth { depth });
    }
    let (u, v) = pixel;
    if !intrinsics.contains(u, v) {
        return Err(GeometryError::PixelOutOfBounds { u, v });
    }
    Ok(Vector3::new(
        (u - intrinsics.cx) / intrinsics.fx * depth,
        (v - intrinsics.cy) / intrinsics.fy * depth,
        depth,
    ))
}

pub fn camera_to_world(point_c: &Vector3<f64>, pose_w_c: &Pose) -> Vector3<f64> {
    invert_pose(pose_w_c).transform_point(point_c)
}

pub fn world_to_camera(point_w: &Vector3<f64>, pose_w_c: &Pose) -> Vector3<f64> {
    pose_w_c.transform_point(point_w)
}

/// Pinhole projection. Does not clip to image bounds; callers check with
/// [`CameraIntrinsics::contains`].
pub fn project_to_pixel(point_w: &Vector3<f64>, pose_w_c: &Pose, intrinsics: &CameraIntrinsics) -> Projection {
    let p = world_to_camera(point_w, pose_w_c);
    if p.z <= 0.0 {
        return Projection::BehindCamera;
    }
    Projection::Pixel {
        u: intrinsics.fx * p.x / p.z + intrinsics.cx,
        v: intrinsics.fy * p.y / p.z + intrinsics.cy,
        depth: p.z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3::{se3_exp, Twist};

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 1000, 480).unwrap()
    }

    #[test]
    fn principal_point_back_projects_onto_axis() {
        let k = vga();
        assert_eq!(back_project((320.0, 240.0), 1.7, &k).unwrap(), Vector3::new(0.0, 0.0, 1.7));
    }

    #[test]
    fn hand_evaluated_back_projection() {
        // (820 - 320) / 500 * 2 = 2
        let p = back_project((820.0, 240.0), 2.0, &vga()).unwrap();
        assert_eq!(p, Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn back_projection_errors() {
        let k = vga();
        assert!(matches!(back_project((1.0, 1.0), 0.0, &k), Err(GeometryError::NonPositiveDepth { .. })));
        assert!(matches!(
            back_project((1000.0, 1.0), 1.0, &k),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
        assert!(CameraIntrinsics::new(500.0, 500.0, 700.0, 240.0, 640, 480).is_err());
    }

    #[test]
    fn camera_to_world_closed_forms() {
        let p = Vector3::new(0.5, -0.2, 3.0);
        assert_eq!(camera_to_world(&p, &Pose::identity()), p);
        let t = Vector3::new(1.0, 2.0, -1.0);
        assert_eq!(camera_to_world(&p, &Pose::from_translation(t)), p - t);
        let pose = se3_exp(&Twist::new(Vector3::new(0.3, 0.1, -0.7), Vector3::new(0.4, -0.3, 0.9)));
        let w = Vector3::new(1.0, -2.0, 0.5);
        let back = camera_to_world(&world_to_camera(&w, &pose), &pose);
        assert!((back - w).norm() < 1e-10);
    }

    #[test]
    fn projection_cases() {
        let k = vga();
        assert_eq!(
            project_to_pixel(&Vector3::new(0.0, 0.0, 2.5), &Pose::identity(), &k),
            Projection::Pixel {
                u: 320.0,
                v: 240.0,
                depth: 2.5
            }
        );
        assert_eq!(
            project_to_pixel(&Vector3::new(0.0, 0.0, -1.0), &Pose::identity(), &k),
            Projection::BehindCamera
        );
    }
}
