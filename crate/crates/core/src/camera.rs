//! Pinhole camera with pixel-center ray convention.

use crate::geom::{Mat3, RigidTransform, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("camera intrinsics must be positive, got fx={fx} fy={fy}")]
    BadIntrinsics { fx: f64, fy: f64 },
    #[error("camera rotation is not orthonormal (residual {0:.3e})")]
    BadRotation(f64),
    #[error("look-at direction is degenerate (eye == target or parallel to up)")]
    DegenerateLookAt,
}

/// Pinhole camera. `pose` maps camera coordinates to world coordinates;
/// the camera looks along its local +z axis. Rays go through pixel centers
/// (u + 0.5, v + 0.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: RigidTransform,
}

impl Camera {
    /// Camera at `eye` looking toward `target`, vertical field of view
    /// `fov_y` in radians, principal point at the image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera, CameraError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(CameraError::DegenerateLookAt);
        }
        let z = forward.normalized();
        let x_raw = up.cross(z);
        if x_raw.norm() < 1e-9 {
            return Err(CameraError::DegenerateLookAt);
        }
        let x = x_raw.normalized();
        let y = z.cross(x);
        let fy = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let cam = Camera {
            fx: fy,
            fy,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
            pose: RigidTransform {
                rotation: Mat3::from_cols(x, y, z),
                translation: eye,
            },
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::BadIntrinsics {
                fx: self.fx,
                fy: self.fy,
            });
        }
        let res = self.pose.rotation.orthonormality_residual();
        if res >= 1e-9 {
            return Err(CameraError::BadRotation(res));
        }
        Ok(())
    }

    pub fn eye(&self) -> Vec3 {
        self.pose.translation
    }

    /// World-space ray through the center of pixel (u, v).
    /// Returns (origin, unit direction).
    pub fn pixel_ray(&self, u: usize, v: usize) -> (Vec3, Vec3) {
        let px = (u as f64 + 0.5 - self.cx) / self.fx;
        let py = (v as f64 + 0.5 - self.cy) / self.fy;
        let dir_cam = Vec3::new(px, py, 1.0);
        let dir = self.pose.to_world_dir(dir_cam).normalized();
        (self.pose.translation, dir)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
