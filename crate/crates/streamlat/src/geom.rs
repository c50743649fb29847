//! Planar geometry and the shared kinematic types.
//!
//! The world is simulated on the 2D ground plane: poses carry (x, y, yaw) and
//! every transform is a rigid motion of that plane.

use serde::{Deserialize, Serialize};

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

/// Smallest absolute difference between two yaw angles, in [0, pi].
pub fn yaw_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// A rigid transform of the ground plane: rotation by `yaw` followed by
/// translation by `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn identity() -> Self {
        Pose2 { x: 0.0, y: 0.0, yaw: 0.0 }
    }

    /// Composition a.then-applied-after b: `(a ∘ b)(p) = a(b(p))`.
    pub fn compose(&self, b: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2 {
            x: self.x + c * b.x - s * b.y,
            y: self.y + s * b.x + c * b.y,
            yaw: wrap_angle(self.yaw + b.yaw),
        }
    }

    /// Apply the transform to a point: rotate, then translate.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Rotate a free vector (no translation).
    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2 {
            x: -(c * self.x + s * self.y),
            y: -(-s * self.x + c * self.y),
            yaw: wrap_angle(-self.yaw),
        }
    }

    /// Relative pose taking coordinates in `self`'s frame into `target`'s
    /// frame: `target⁻¹ ∘ self`.
    pub fn relative_to(&self, target: &Pose2) -> Pose2 {
        target.inverse().compose(self)
    }
}

pub fn compose_pose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

pub fn apply_pose(t: &Pose2, p: [f64; 2]) -> [f64; 2] {
    t.apply(p)
}

/// Ground-truth kinematic state of one agent at a continuous time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: u32,
    pub class_id: usize,
    pub pose: Pose2,
    /// World-frame velocity, m/s.
    pub velocity: [f64; 2],
    pub turn_rate: f64,
    /// (length, width, height) in meters.
    pub size: [f64; 3],
}

/// One detector output in some ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub center: [f64; 2],
    pub yaw: f64,
    pub size: [f64; 3],
    /// Velocity expressed in the same frame as `center`.
    pub velocity: [f64; 2],
    pub class_id: usize,
    pub score: f64,
}
