use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use super::cloud::Vec3;
use crate::error::{Error, Result};

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return 2pi for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Rigid motion restricted to the ground plane: translation plus a rotation
/// about the gravity axis (+z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPose {
    pub tx: f64,
    pub ty: f64,
    #[serde(default)]
    pub tz: f64,
    pub yaw: f64,
}

impl Default for GroundPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl GroundPose {
    pub fn new(tx: f64, ty: f64, tz: f64, yaw: f64) -> Self {
        Self {
            tx,
            ty,
            tz,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            tz: 0.0,
            yaw: 0.0,
        }
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.tx, self.ty, self.tz)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(
            c * p.x - s * p.y + self.tx,
            s * p.x + c * p.y + self.ty,
            p.z + self.tz,
        )
    }

    /// Rotates a direction (no translation).
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    pub fn inverse(&self) -> GroundPose {
        let (s, c) = self.yaw.sin_cos();
        // R^T * -t
        GroundPose::new(
            -(c * self.tx + s * self.ty),
            -(-s * self.tx + c * self.ty),
            -self.tz,
            -self.yaw,
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &GroundPose) -> GroundPose {
        let t = self.apply(&other.translation());
        GroundPose::new(t.x, t.y, t.z, self.yaw + other.yaw)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation());
        m[(0, 3)] = self.tx;
        m[(1, 3)] = self.ty;
        m[(2, 3)] = self.tz;
        m
    }

    /// Inverse of [`to_matrix`](Self::to_matrix). Fails if the matrix is not a
    /// rigid transform rotating about +z.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<GroundPose> {
        const TOL: f64 = 1e-6;
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let orthonormal = (r.transpose() * r - Matrix3::identity()).abs().max() < TOL;
        let about_z = r[(2, 2)] > 1.0 - TOL
            && r[(0, 2)].abs() < TOL
            && r[(1, 2)].abs() < TOL
            && r[(2, 0)].abs() < TOL
            && r[(2, 1)].abs() < TOL;
        let bottom = m[(3, 0)].abs() < TOL
            && m[(3, 1)].abs() < TOL
            && m[(3, 2)].abs() < TOL
            && (m[(3, 3)] - 1.0).abs() < TOL;
        if !(orthonormal && about_z && bottom && r.determinant() > 0.0) {
            return Err(Error::InvalidParameter(
                "matrix is not a ground-plane rigid transform".into(),
            ));
        }
        Ok(GroundPose::new(
            m[(0, 3)],
            m[(1, 3)],
            m[(2, 3)],
            r[(1, 0)].atan2(r[(0, 0)]),
        ))
    }

    /// Absolute yaw difference wrapped to `[0, pi]`.
    pub fn yaw_distance(&self, other: &GroundPose) -> f64 {
        wrap_angle(self.yaw - other.yaw).abs()
    }

    /// Planar distance between the two translations.
    pub fn planar_distance(&self, other: &GroundPose) -> f64 {
        ((self.tx - other.tx).powi(2) + (self.ty - other.ty).powi(2)).sqrt()
    }
}
