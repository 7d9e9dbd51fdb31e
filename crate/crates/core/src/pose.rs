//! Planar rigid motions.

use serde::{Deserialize, Serialize};

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_deg(angle_deg: f64) -> f64 {
    let wrapped = (angle_deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// An SE(2) element: translation in meters (x forward, y left) and yaw in degrees.
///
/// Yaw is counter-clockwise seen from above and is kept in `[-180, 180)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x_m: f64,
    pub y_m: f64,
    pub yaw_deg: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2D {
    pub fn new(x_m: f64, y_m: f64, yaw_deg: f64) -> Self {
        Self {
            x_m,
            y_m,
            yaw_deg: wrap_deg(yaw_deg),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x_m: 0.0,
            y_m: 0.0,
            yaw_deg: 0.0,
        }
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.x_m, self.y_m]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x_m.hypot(self.y_m)
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        [self.x_m + c * p[0] - s * p[1], self.y_m + s * p[0] + c * p[1]]
    }

    /// Maps a point from the parent frame into this pose's frame.
    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        let dx = p[0] - self.x_m;
        let dy = p[1] - self.y_m;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Group composition `self ∘ other`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let [x, y] = self.transform_point(other.translation());
        Pose2D::new(x, y, self.yaw_deg + other.yaw_deg)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        Pose2D::new(
            -(c * self.x_m + s * self.y_m),
            -(-s * self.x_m + c * self.y_m),
            -self.yaw_deg,
        )
    }

    /// Pose of `other` expressed in this pose's frame.
    pub fn between(&self, other: &Pose2D) -> Pose2D {
        self.inverse().compose(other)
    }

    /// The alignment that the metric localizer estimates between a source
    /// frame and a target frame, given both world poses.
    ///
    /// Source-frame coordinates `p` map to target-frame coordinates as
    /// `R(yaw) · (p + (x, y))`: the translation is the shift fed to BEV
    /// padding of the source grid, and the yaw is the subsequent rotation.
    /// In terms of the target pose seen from the source, `(o, ψ)`, this is
    /// `(-o, -ψ)`.
    pub fn alignment(source_world: &Pose2D, target_world: &Pose2D) -> Pose2D {
        let rel = source_world.between(target_world);
        Pose2D::new(-rel.x_m, -rel.y_m, -rel.yaw_deg)
    }

    /// Maps a source-frame point into the target frame under an alignment.
    pub fn apply_alignment(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        let qx = p[0] + self.x_m;
        let qy = p[1] + self.y_m;
        [c * qx - s * qy, s * qx + c * qy]
    }

    /// Absolute wrapped yaw difference in degrees.
    pub fn yaw_error_deg(&self, other: &Pose2D) -> f64 {
        wrap_deg(self.yaw_deg - other.yaw_deg).abs()
    }

    pub fn translation_error_m(&self, other: &Pose2D) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}
