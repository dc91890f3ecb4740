//! Rigid poses: position in metres plus a unit quaternion.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    /// Components stored as given; `orientation()` normalizes.
    pub quaternion: [f64; 4],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            quaternion: [0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Sensor at `position` with heading `yaw` about +z.
    pub fn from_position_yaw(position: Vector3<f64>, yaw: f64) -> Self {
        Self::from_isometry(&Isometry3::from_parts(
            Translation3::from(position),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        ))
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        Self {
            position: iso.translation.vector,
            quaternion: [q.i, q.j, q.k, q.w],
        }
    }

    /// `[x, y, z, qx, qy, qz, qw]`.
    pub fn to_array(&self) -> [f64; 7] {
        let p = self.position;
        let q = self.quaternion;
        [p.x, p.y, p.z, q[0], q[1], q[2], q[3]]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        let pose = Self {
            position: Vector3::new(a[0], a[1], a[2]),
            quaternion: [a[3], a[4], a[5], a[6]],
        };
        let n = pose.quaternion.iter().map(|v| v * v).sum::<f64>();
        if !a.iter().all(|v| v.is_finite()) || n < 1e-12 {
            return Err(Error::invalid(format!("invalid pose {a:?}")));
        }
        Ok(pose)
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        let [x, y, z, w] = self.quaternion;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    /// Sensor-to-world transform.
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation())
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_pose_round_trip() {
        let p = Pose::from_position_yaw(Vector3::new(1.0, 2.0, 0.5), 0.3);
        let back = Pose::from_array(p.to_array()).unwrap();
        assert_eq!(back, p);
        let v = p.isometry().rotation * Vector3::x();
        assert!((v - Vector3::new(0.3f64.cos(), 0.3f64.sin(), 0.0)).norm() < 1e-15);
        assert!(Pose::from_array([0.0; 7]).is_err());
    }
}
