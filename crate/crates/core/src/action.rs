use serde::{Deserialize, Serialize};

/// Motor command: a 3D translation plus a sine-cosine encoding of the yaw change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub translation: [f64; 3],
    /// `(sin Δyaw, cos Δyaw)`
    pub rotation: [f64; 2],
}

pub const ACTION_DIM: usize = 5;

impl ActionCommand {
    pub const IDENTITY: Self = Self {
        translation: [0.0; 3],
        rotation: [0.0, 1.0],
    };

    pub fn new(dx: f64, dy: f64, dz: f64, yaw_delta: f64) -> Self {
        Self {
            translation: [dx, dy, dz],
            rotation: [yaw_delta.sin(), yaw_delta.cos()],
        }
    }

    /// Builds from a raw 5-vector, projecting the rotation pair onto the unit
    /// circle. A degenerate `(0, 0)` pair maps to the identity rotation.
    pub fn from_array(v: [f64; ACTION_DIM]) -> Self {
        let (s, c) = (v[3], v[4]);
        let norm = s.hypot(c);
        let rotation = if norm > 1e-12 && norm.is_finite() {
            [s / norm, c / norm]
        } else {
            [0.0, 1.0]
        };
        Self {
            translation: [v[0], v[1], v[2]],
            rotation,
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let [dx, dy, dz] = self.translation;
        let [s, c] = self.rotation;
        [dx, dy, dz, s, c]
    }

    pub fn yaw_delta(&self) -> f64 {
        self.rotation[0].atan2(self.rotation[1])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && (self.rotation[0].powi(2) + self.rotation[1].powi(2) - 1.0).abs() <= 1e-6
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}
