use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole intrinsics for pre-rectified images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
}

impl Default for CameraIntrinsics {
    /// TUM RGB-D defaults (640×480, 5000 units per meter).
    fn default() -> Self {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            depth_scale: 1.0 / 5000.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Intrinsics with the same field of view at a different resolution.
    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            depth_scale: self.depth_scale,
        }
    }

    /// Camera-frame ray direction (z = 1) through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }
}

/// Camera-to-world rigid transform. Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// From a translation and a unit quaternion given as `(qx, qy, qz, qw)`.
    pub fn from_tum(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        if !(quat.norm() > 1e-9) {
            return Err(Error::Domain(format!("degenerate quaternion {q:?}")));
        }
        let rot = UnitQuaternion::from_quaternion(quat)
            .to_rotation_matrix()
            .into_inner();
        Pose::new(rot, Vector3::from(t))
    }

    /// Returns `(tx, ty, tz)` and `(qx, qy, qz, qw)`.
    pub fn to_tum(&self) -> ([f64; 3], [f64; 4]) {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let c = q.quaternion().coords;
        (self.translation.into(), [c.x, c.y, c.z, c.w])
    }

    /// Camera at `eye` looking at `target`, with `up` as the approximate
    /// world up direction (image y points away from it).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Domain("look-at target coincides with eye".into()))?;
        let y = -(up - z * up.dot(&z)).try_normalize(1e-9).ok_or_else(|| {
            Error::Domain("look-at up vector is parallel to the view axis".into())
        })?;
        let x = y.cross(&z);
        Pose::new(Matrix3::from_columns(&[x, y, z]), eye)
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        let det = self.rotation.determinant();
        if err > 1e-6 || (det - 1.0).abs() > 1e-6 || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::Domain(format!(
                "pose rotation is not a proper rotation (orthogonality error {err:.2e}, det {det:.6})"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_quaternion_is_identity() {
        let pose = Pose::from_tum([0.0; 3], [0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pose.rotation, Matrix3::identity());
    }

    #[test]
    fn tum_round_trip() {
        let pose = Pose::from_tum([1.0, -2.0, 0.5], [0.1, -0.3, 0.2, 0.9]).unwrap();
        let (t, q) = pose.to_tum();
        let back = Pose::from_tum(t, q).unwrap();
        assert!((back.rotation - pose.rotation).abs().max() < 1e-12);
        assert_eq!(t, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn look_at_points_the_optical_axis_at_the_target() {
        let eye = Vector3::new(3.0, 1.0, -2.0);
        let target = Vector3::new(0.0, 0.5, 0.0);
        let pose = Pose::look_at(eye, target, Vector3::y()).unwrap();
        let expected = (target - eye).normalize();
        assert!((pose.forward() - expected).norm() < 1e-12);
        let cam = pose.to_camera(&target);
        assert!(cam.x.abs() < 1e-12 && cam.y.abs() < 1e-12 && cam.z > 0.0);
        // world up projects to negative image y
        let above = pose.to_camera(&(target + Vector3::y() * 0.1));
        assert!(above.y < 0.0);
    }

    #[test]
    fn improper_rotations_are_rejected() {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(flip, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::default().validate().is_ok());
        let bad = CameraIntrinsics {
            cx: 700.0,
            ..CameraIntrinsics::default()
        };
        assert!(bad.validate().is_err());
        let bad = CameraIntrinsics {
            fy: -480.0,
            ..CameraIntrinsics::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scaling_preserves_field_of_view() {
        let k = CameraIntrinsics::default();
        let s = k.scaled(160, 120);
        let a = k.pixel_ray(0.0, 0.0);
        let b = s.pixel_ray(-0.375, -0.375);
        assert!((a - b).norm() < 1e-12);
    }
}
