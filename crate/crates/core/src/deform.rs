//! Canonical ↔ observation warps and pinhole cameras.
//!
//! The observation space is the per-frame camera space: a canonical point is
//! first moved by the blended body transform and then by the camera
//! extrinsic. Projection applies the intrinsics to camera-space points.

use serde::{Deserialize, Serialize};

use crate::dualquat::{DualQuaternion, RigidTransform};
use crate::rig::{skin_weights, Rig};
use crate::skinning::dbs_blend;
use crate::{Error, Mat3, Result, Vec3};

/// Pinhole camera with extrinsic `world → camera` (camera looks down `+z`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct Camera {
    pub extrinsic: RigidTransform,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    extrinsic: RigidTransform,
    intrinsics: [f64; 4],
}

impl TryFrom<CameraRepr> for Camera {
    type Error = Error;
    fn try_from(r: CameraRepr) -> Result<Self> {
        let [fx, fy, cx, cy] = r.intrinsics;
        Camera::new(r.extrinsic, fx, fy, cx, cy)
    }
}

impl From<Camera> for CameraRepr {
    fn from(c: Camera) -> Self {
        CameraRepr { extrinsic: c.extrinsic, intrinsics: c.intrinsics() }
    }
}

impl Camera {
    pub fn new(extrinsic: RigidTransform, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::Parameter(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Parameter("principal point must be finite".into()));
        }
        Ok(Camera { extrinsic, fx, fy, cx, cy })
    }

    /// Camera at `eye` looking at `target`; image `y` points away from `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Parameter("eye and target coincide".into()))?;
        let y = (-up + z * up.dot(&z))
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Parameter("up vector parallel to viewing direction".into()))?;
        let x = y.cross(&z);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let extrinsic = RigidTransform::new(r, -(r * eye))?;
        Camera::new(extrinsic, fx, fy, cx, cy)
    }

    pub fn intrinsics(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    pub fn with_extrinsic(&self, extrinsic: RigidTransform) -> Camera {
        Camera { extrinsic, ..*self }
    }

    /// Pixel of a camera-space point.
    pub fn project_camera_space(&self, x: &Vec3) -> Result<[f64; 2]> {
        if !(x.z > 0.0) {
            return Err(Error::BehindCamera(x.z));
        }
        Ok([self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy])
    }

    /// Unit camera-space direction through pixel coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }
}

/// Pixel of a world (canonical-frame) point: extrinsic, then intrinsics.
pub fn project(cam: &Camera, x: &Vec3) -> Result<[f64; 2]> {
    cam.project_camera_space(&cam.extrinsic.apply(x))
}

/// Canonical point to observation (camera) space: blended body motion, then
/// the camera extrinsic.
pub fn deform_c2o(x: &Vec3, cam: &Camera, w: &[f64], pose: &[DualQuaternion]) -> Result<Vec3> {
    let body = dbs_blend(w, pose, false)?;
    Ok(cam.extrinsic.apply(&body.apply(x)))
}

/// Observation point back to canonical space: inverse extrinsic, then the
/// blend of inverted joint motions.
pub fn deform_o2c(x: &Vec3, cam: &Camera, w: &[f64], pose: &[DualQuaternion]) -> Result<Vec3> {
    let body = dbs_blend(w, pose, true)?;
    Ok(body.apply(&cam.extrinsic.apply_inverse(x)))
}

/// `|c2o(o2c(x)) − x|²` with explicit weights for each leg.
pub fn cycle_residual(
    x: &Vec3,
    cam: &Camera,
    weights_o2c: &[f64],
    weights_c2o: &[f64],
    pose: &[DualQuaternion],
) -> Result<f64> {
    let canonical = deform_o2c(x, cam, weights_o2c, pose)?;
    let back = deform_c2o(&canonical, cam, weights_c2o, pose)?;
    Ok((back - x).norm_squared())
}

/// Warps of one frame with rig-derived weights: inverse warps use weights of
/// the posed rig at the body-space point, forward warps use the rest rig at the
/// canonical point.
#[derive(Debug, Clone)]
pub struct FrameWarp<'a> {
    pub camera: Camera,
    pub rig: &'a Rig,
    pub posed: Rig,
    pub pose: Vec<DualQuaternion>,
}

impl<'a> FrameWarp<'a> {
    pub fn new(camera: Camera, rig: &'a Rig, pose: Vec<DualQuaternion>) -> Result<Self> {
        let posed = rig.posed(&pose)?;
        Ok(FrameWarp { camera, rig, posed, pose })
    }

    pub fn weights_observed(&self, x_obs: &Vec3) -> Vec<f64> {
        skin_weights(&self.camera.extrinsic.apply_inverse(x_obs), &self.posed).into_inner()
    }

    pub fn weights_canonical(&self, x: &Vec3) -> Vec<f64> {
        skin_weights(x, self.rig).into_inner()
    }

    pub fn to_canonical(&self, x_obs: &Vec3) -> Result<Vec3> {
        if self.pose.len() == 1 {
            return deform_o2c(x_obs, &self.camera, &[1.0], &self.pose);
        }
        deform_o2c(x_obs, &self.camera, &self.weights_observed(x_obs), &self.pose)
    }

    pub fn to_observed(&self, x: &Vec3) -> Result<Vec3> {
        if self.pose.len() == 1 {
            return deform_c2o(x, &self.camera, &[1.0], &self.pose);
        }
        deform_c2o(x, &self.camera, &self.weights_canonical(x), &self.pose)
    }

    /// Cycle residual with each leg's weights evaluated in its own space.
    pub fn cycle_residual(&self, x_obs: &Vec3) -> Result<f64> {
        let x = self.to_canonical(x_obs)?;
        Ok((self.to_observed(&x)? - x_obs).norm_squared())
    }
}
