//! Rigid 3D geometry: vectors, unit quaternions, rigid transforms.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on |1 - ||q||| accepted for an ingested unit quaternion.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::Domain("cannot normalize near-zero vector".into()));
        }
        Ok(self.scaled(1.0 / n))
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self).scaled(t)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scaled(s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion (w, x, y, z) representing a rotation.
///
/// Normalized on construction; every operation that produces a quaternion
/// keeps the norm within [`UNIT_NORM_TOL`] of one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a unit quaternion, normalizing the components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Domain(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(UnitQuat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_axis_angle(axis: Vec3, radians: f64) -> Result<Self> {
        let a = axis.normalized()?;
        let (s, c) = (radians * 0.5).sin_cos();
        UnitQuat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(self, o: UnitQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(self) -> UnitQuat {
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    fn negated(self) -> UnitQuat {
        UnitQuat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product; `a * b` rotates by `b` first, then `a`.
    pub fn mul(self, o: UnitQuat) -> UnitQuat {
        UnitQuat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Rotates a vector.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // q v q* expanded as v + 2 u x (u x v + w v), u = (x, y, z).
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scaled(2.0);
        v + t.scaled(self.w) + u.cross(t)
    }

    /// Rotation angle in radians between the two rotations (shortest arc).
    pub fn angle_to(self, o: UnitQuat) -> f64 {
        let d = self.dot(o).abs().min(1.0);
        2.0 * d.acos()
    }

    /// Rotation mapping the standard axes onto the orthonormal basis
    /// (u, v, w): ex -> u, ey -> v, ez -> w.
    pub fn from_basis(u: Vec3, v: Vec3, w: Vec3) -> Result<Self> {
        // Shepperd's method over the rotation matrix with columns u, v, w.
        let (m00, m01, m02) = (u.x, v.x, w.x);
        let (m10, m11, m12) = (u.y, v.y, w.y);
        let (m20, m21, m22) = (u.z, v.z, w.z);
        let trace = m00 + m11 + m22;
        let (qw, qx, qy, qz);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            qw = 0.25 * s;
            qx = (m21 - m12) / s;
            qy = (m02 - m20) / s;
            qz = (m10 - m01) / s;
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            qw = (m21 - m12) / s;
            qx = 0.25 * s;
            qy = (m01 + m10) / s;
            qz = (m02 + m20) / s;
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            qw = (m02 - m20) / s;
            qx = (m01 + m10) / s;
            qy = 0.25 * s;
            qz = (m12 + m21) / s;
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            qw = (m10 - m01) / s;
            qx = (m02 + m20) / s;
            qy = (m12 + m21) / s;
            qz = 0.25 * s;
        }
        UnitQuat::new(qw, qx, qy, qz)
    }

    /// Spherical linear interpolation along the shortest arc.
    ///
    /// Returns the endpoints bit-exactly at `t = 0` and `t = 1`; for nearly
    /// parallel inputs falls back to normalized linear interpolation.
    pub fn slerp(self, other: UnitQuat, t: f64) -> UnitQuat {
        if t == 0.0 {
            return self;
        }
        if t == 1.0 {
            return other;
        }
        let mut end = other;
        let mut dot = self.dot(other);
        // Take the shorter of the two arcs connecting the rotations.
        if dot < 0.0 {
            end = end.negated();
            dot = -dot;
        }
        let (wa, wb) = if dot > 1.0 - 1e-10 {
            (1.0 - t, t)
        } else {
            let theta = dot.min(1.0).acos();
            let sin_theta = theta.sin();
            (((1.0 - t) * theta).sin() / sin_theta, (t * theta).sin() / sin_theta)
        };
        // Renormalize to keep downstream compositions unit-norm.
        UnitQuat::new(
            wa * self.w + wb * end.w,
            wa * self.x + wb * end.x,
            wa * self.y + wb * end.y,
            wa * self.z + wb * end.z,
        )
        .expect("slerp of unit quaternions is nonzero")
    }
}

/// Rigid transform: rotation followed by translation, lengths in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuat,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: UnitQuat::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul(inner.rotation),
            translation: self.rotation.rotate(inner.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.conjugate();
        RigidTransform {
            rotation: inv_rot,
            translation: -inv_rot.rotate(self.translation),
        }
    }
}
