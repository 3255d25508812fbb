//! Pinhole camera: projection, back-projection and the camera mounting pose.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::is_rotation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Field of view in degrees. Informational only.
    pub fov: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, fov: f64) -> Result<Self> {
        for (name, v) in [("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("intrinsic {name} must be positive, got {v}")));
            }
        }
        Ok(Self { fx, fy, cx, cy, fov })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Image width and height, taking the principal point as the image centre.
    pub fn image_size(&self) -> (f64, f64) {
        (2.0 * self.cx, 2.0 * self.cy)
    }

    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        let (w, h) = self.image_size();
        (0.0..=w).contains(&u) && (0.0..=h).contains(&v)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 1280.0,
            fy: 1280.0,
            cx: 640.0,
            cy: 640.0,
            fov: 45.0,
        }
    }
}

/// Rigid transform `X_camera = Γ X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation, 1e-9) {
            return Err(Error::Parameter("camera rotation is not a proper rotation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at the chaser centre of mass looking along −y of the LVLH frame,
    /// with image rows along −z.
    pub fn looking_aft() -> Self {
        Self {
            rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0),
            translation: Vector3::zeros(),
        }
    }

    /// Camera optical centre expressed in world coordinates.
    pub fn position_in_world(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

impl Default for CameraExtrinsics {
    fn default() -> Self {
        Self::looking_aft()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDetection {
    pub u: f64,
    pub v: f64,
    /// Z coordinate in the camera frame (m).
    pub depth: f64,
    pub marker_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl CameraModel {
    /// Project a world point, returning `None` if it falls outside the image.
    pub fn observe(&self, x_world: &Vector3<f64>) -> Result<Option<PixelDetection>> {
        let pc = camera_from_world(x_world, &self.extrinsics);
        let d = project(&pc, &self.intrinsics)?;
        Ok(self.intrinsics.in_frame(d.u, d.v).then_some(d))
    }

    /// Back-project a detection and express it in world coordinates.
    pub fn to_world(&self, d: &PixelDetection) -> Result<Vector3<f64>> {
        let pc = back_project(d, &self.intrinsics)?;
        Ok(world_from_camera(&pc, &self.extrinsics))
    }
}

pub fn project(point_camera: &Vector3<f64>, k: &CameraIntrinsics) -> Result<PixelDetection> {
    let z = point_camera.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    Ok(PixelDetection {
        u: k.fx * point_camera.x / z + k.cx,
        v: k.fy * point_camera.y / z + k.cy,
        depth: z,
        marker_id: None,
    })
}

pub fn back_project(d: &PixelDetection, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(d.depth > 0.0) {
        return Err(Error::Domain(format!("detection depth must be positive, got {}", d.depth)));
    }
    Ok(Vector3::new(
        (d.u - k.cx) / k.fx * d.depth,
        (d.v - k.cy) / k.fy * d.depth,
        d.depth,
    ))
}

pub fn camera_from_world(x_world: &Vector3<f64>, e: &CameraExtrinsics) -> Vector3<f64> {
    e.rotation * x_world + e.translation
}

pub fn world_from_camera(x_camera: &Vector3<f64>, e: &CameraExtrinsics) -> Vector3<f64> {
    e.rotation.transpose() * (x_camera - e.translation)
}
