//! Pinhole projection from camera-frame meters to pixels.

use mmtl_core::ingest::CameraIntrinsics;
use nalgebra::{Point2, Vector3};

use crate::SimError;

/// `u = fx * X / Z + cx`, `v = fy * Y / Z + cy`.
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Point2<f64>, SimError> {
    if !(point.z > 0.0) {
        return Err(SimError::BehindCamera { z: point.z });
    }
    Ok(Point2::new(k.fx * point.x / point.z + k.cx, k.fy * point.y / point.z + k.cy))
}

/// Head-pose angles whose gaze direction is `dir`. Inverts
/// `d = (-cos p sin y, -sin p, -cos p cos y)`.
pub fn angles_for(dir: &Vector3<f64>) -> (f64, f64) {
    let d = dir.normalize();
    let pitch = (-d.y).clamp(-1.0, 1.0).asin();
    let yaw = (-d.x).atan2(-d.z);
    (pitch, yaw)
}
