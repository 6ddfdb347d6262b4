//! Coordinate frames, rotations, boxes, and overlap metrics.
//!
//! The pipeline moves every object through a fixed chain of frames:
//! viewer-centred (sensor at the origin), frustum (azimuth removed),
//! frustum-mean (centroid subtracted), and canonical (object centred at
//! the origin, facing +x). This module owns those frames and the
//! deterministic math that moves point sets between them.
//!
//! Convention used throughout: points are row vectors, rotations act by
//! right-multiplication. `rotate_about_up(cloud, -θ_f)` removes the
//! azimuth θ_f; `canonicalize` subtracts a translation and then rotates.

mod iou;
mod linalg;
mod transforms;

pub use iou::{iou_3d, iou_bev};
pub use linalg::{Mat3, Vec3};
pub use transforms::{
    box_from_canonical, canonicalize, decanonicalize, frustum_angle, mean_center,
    rot6d_to_matrix, rotate_about_up, CanonicalBox, BOX_MIN_EXTENT, SIXD_MIN_NORM,
};

use thiserror::Error;

/// Errors from the geometric substrate.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("operation requires a non-empty point cloud")]
    EmptyInput,
    #[error("6D rotation input is degenerate (norm {norm:.3e} <= {min:.0e})")]
    DegenerateSixD { norm: f64, min: f64 },
    #[error("matrix is not a rotation: {reason}")]
    NotARotation { reason: String },
    #[error("box dims must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveDims(f64, f64, f64),
}

/// Coordinate frame a point cloud lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Sensor at the origin, +z up; raw partial clouds and recovered
    /// completions live here.
    ViewerCentred,
    /// Viewer-centred rotated so the cloud's mean azimuth is zero.
    Frustum,
    /// Frustum frame with the centroid subtracted.
    FrustumMean,
    /// Object centred at the origin, aligned to +x.
    Canonical,
}

/// Ordered list of 3D points tagged with the frame they live in.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Self {
        debug_assert!(points.iter().all(|p| p.is_finite()), "non-finite coordinate");
        PointCloud { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    /// Arithmetic mean of the points.
    pub fn centroid(&self) -> Result<Vec3, GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let sum = self.points.iter().fold(Vec3::ZERO, |a, &p| a + p);
        Ok(sum * (1.0 / self.points.len() as f64))
    }
}

/// Element of SO(3), validated on construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3 {
    m: Mat3,
}

/// Orthonormality / determinant tolerance for accepting a rotation.
pub const ROTATION_TOL: f64 = 1e-6;

impl Rotation3 {
    pub const IDENTITY: Rotation3 = Rotation3 { m: Mat3::IDENTITY };

    /// Validates `mᵀm = I` and `det = +1` within [`ROTATION_TOL`].
    pub fn try_new(m: Mat3) -> Result<Self, GeometryError> {
        let gram = m.transpose().matmul(&m);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = gram.m[i][j];
                if (got - want).abs() > ROTATION_TOL {
                    return Err(GeometryError::NotARotation {
                        reason: format!("(mᵀm)[{i}][{j}] = {got:.9}, want {want}"),
                    });
                }
            }
        }
        let det = m.det();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotARotation {
                reason: format!("det = {det:.9}, want 1"),
            });
        }
        Ok(Rotation3 { m })
    }

    /// Rotation about the up (z) axis by `theta`, row-vector convention.
    pub fn about_up(theta: f64) -> Self {
        Rotation3 { m: Mat3::rotation_z(theta) }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    /// Inverse rotation (transpose).
    pub fn inverse(&self) -> Rotation3 {
        Rotation3 { m: self.m.transpose() }
    }

    /// `self` then `other`, row-vector convention: `p * self * other`.
    pub fn then(&self, other: &Rotation3) -> Rotation3 {
        Rotation3 { m: self.m.matmul(&other.m) }
    }

    /// Applies to a row vector: `p * R`.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.m.apply_row(p)
    }

    /// Geodesic angle in radians between two rotations.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let rel = self.m.matmul(&other.m.transpose());
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Rigid map between frames: `p_out = (p_in − translation) * rotation`.
///
/// The subtract-then-rotate shape matches the canonicalization chain;
/// the inverse is `p_in = p_out * rotationᵀ + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl RigidPose {
    pub const IDENTITY: RigidPose = RigidPose {
        rotation: Rotation3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Rotation3, translation: Vec3) -> Self {
        RigidPose { rotation, translation }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p - self.translation)
    }

    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        self.rotation.inverse().apply(p) + self.translation
    }

    /// Pose such that `inverse().apply` equals `self.apply_inverse`.
    pub fn inverse(&self) -> RigidPose {
        RigidPose {
            rotation: self.rotation.inverse(),
            translation: -self.rotation.apply(self.translation),
        }
    }

    /// `self` followed by `other` as a single pose.
    pub fn then(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation.then(&other.rotation),
            translation: self.translation
                + self.rotation.inverse().apply(other.translation),
        }
    }
}

/// Oriented 3D box: `dims = (l, w, h)` with l along +x at yaw 0, w along
/// +y, h along +z; yaw rotates the footprint about the up axis.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Box3 {
    pub center: Vec3,
    pub dims: Vec3,
    pub yaw: f64,
}

impl Box3 {
    /// Validates positive dims and normalizes yaw into (−π, π].
    pub fn new(center: Vec3, dims: Vec3, yaw: f64) -> Result<Self, GeometryError> {
        if !(dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0) {
            return Err(GeometryError::NonPositiveDims(dims.x, dims.y, dims.z));
        }
        Ok(Box3 { center, dims, yaw: normalize_yaw(yaw) })
    }

    /// Footprint corners in the x–y plane, counter-clockwise.
    pub fn corners_bev(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.dims.x / 2.0, self.dims.y / 2.0);
        let (s, c) = self.yaw.sin_cos();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| {
            // Row-vector rotation about up, then translate.
            [
                x * c - y * s + self.center.x,
                x * s + y * c + self.center.y,
            ]
        })
    }

    pub fn bottom(&self) -> f64 {
        self.center.z - self.dims.z / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.dims.z / 2.0
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// True when `p` lies inside the box (boundary inclusive).
    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        // Undo the yaw: rotate the offset by −yaw (row convention).
        let lx = d.x * c + d.y * s;
        let ly = -d.x * s + d.y * c;
        lx.abs() <= self.dims.x / 2.0 + 1e-12
            && ly.abs() <= self.dims.y / 2.0 + 1e-12
            && d.z.abs() <= self.dims.z / 2.0 + 1e-12
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = yaw % two_pi;
    if y <= -std::f64::consts::PI {
        y += two_pi;
    } else if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rotation_validation_rejects_scaled_matrix() {
        let mut m = Mat3::IDENTITY;
        m.m[0][0] = 1.1;
        assert!(matches!(
            Rotation3::try_new(m),
            Err(GeometryError::NotARotation { .. })
        ));
    }

    #[test]
    fn rotation_validation_rejects_reflection() {
        let mut m = Mat3::IDENTITY;
        m.m[2][2] = -1.0;
        assert!(Rotation3::try_new(m).is_err());
    }

    #[test]
    fn pose_composed_with_inverse_is_identity() {
        let pose = RigidPose::new(Rotation3::about_up(0.9), Vec3::new(1.0, -2.0, 0.5));
        let id = pose.then(&pose.inverse());
        let p = Vec3::new(3.0, 4.0, 5.0);
        assert!((id.apply(p) - p).norm() < 1e-6);

        let q = pose.inverse().apply(pose.apply(p));
        assert!((q - p).norm() < 1e-12);
    }

    #[test]
    fn pose_apply_inverse_undoes_apply() {
        let pose = RigidPose::new(Rotation3::about_up(-2.1), Vec3::new(0.3, 7.0, -1.0));
        let p = Vec3::new(-1.0, 2.0, 0.25);
        assert!((pose.apply_inverse(pose.apply(p)) - p).norm() < 1e-12);
    }

    #[test]
    fn yaw_normalizes_into_half_open_interval() {
        assert!((normalize_yaw(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_yaw(-PI) - PI).abs() < 1e-12);
        assert!((normalize_yaw(0.5) - 0.5).abs() < 1e-12);
        let y = normalize_yaw(-3.5 * PI);
        assert!(y > -PI && y <= PI);
    }

    #[test]
    fn box_rejects_non_positive_dims() {
        let err = Box3::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0), 0.0);
        assert!(matches!(err, Err(GeometryError::NonPositiveDims(..))));
    }

    #[test]
    fn box_contains_respects_yaw() {
        let b = Box3::new(Vec3::ZERO, Vec3::new(4.0, 2.0, 2.0), PI / 2.0).unwrap();
        // After a quarter turn the long axis lies along y.
        assert!(b.contains(Vec3::new(0.0, 1.9, 0.0)));
        assert!(!b.contains(Vec3::new(1.9, 0.0, 0.0)));
    }

    #[test]
    fn bev_corners_are_counter_clockwise() {
        let b = Box3::new(Vec3::new(1.0, 2.0, 0.0), Vec3::new(4.0, 2.0, 1.5), 0.3).unwrap();
        let c = b.corners_bev();
        let mut area2 = 0.0;
        for i in 0..4 {
            let [x0, y0] = c[i];
            let [x1, y1] = c[(i + 1) % 4];
            area2 += x0 * y1 - x1 * y0;
        }
        assert!(area2 > 0.0, "signed area must be positive for CCW order");
        assert!((area2 / 2.0 - 8.0).abs() < 1e-12);
    }
}
