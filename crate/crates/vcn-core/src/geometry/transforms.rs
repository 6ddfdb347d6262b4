//! Frame transforms of the canonicalization chain.
//!
//! The forward chain for one object is
//!
//! ```text
//! P_f    = P_vc * R(−θ_f)                    rotate_about_up
//! P_f,m  = P_f − mean(P_f)                   mean_center
//! P_cn   = (P_f − t_f) * R_f                 canonicalize
//! ```
//!
//! and the recovery of a canonical completion is
//!
//! ```text
//! S_vc   = (S_cn * R_fᵀ + t_f) * R(θ_f)      decanonicalize
//! ```
//!
//! which is the exact inverse of the forward chain.

use super::linalg::{Mat3, Vec3};
use super::{Box3, Frame, GeometryError, PointCloud, RigidPose, Rotation3};

/// Smallest norm accepted by the 6D → SO(3) conversion.
pub const SIXD_MIN_NORM: f64 = 1e-8;

/// Extent below which a fitted box counts as degenerate; clamped, not an
/// error, so a collapsed completion cannot kill a training loop.
pub const BOX_MIN_EXTENT: f64 = 1e-6;

/// Azimuth of the cloud centroid: `θ_f = atan2(mean_y, mean_x)`, in (−π, π].
///
/// The two-argument arctangent is required; a plain `atan(y/x)` picks the
/// wrong quadrant for objects behind the sensor.
pub fn frustum_angle(cloud: &PointCloud) -> Result<f64, GeometryError> {
    let mean = cloud.centroid()?;
    Ok(mean.y.atan2(mean.x))
}

/// Rotates every point about the up axis: `P * R(angle)`.
///
/// Called with `angle = −θ_f` this removes the frustum azimuth, so the
/// output is tagged [`Frame::Frustum`]. The transformed centroid of such a
/// call lies on the +x axis.
pub fn rotate_about_up(cloud: &PointCloud, angle: f64) -> Result<PointCloud, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let r = Mat3::rotation_z(angle);
    let points = cloud.points.iter().map(|&p| r.apply_row(p)).collect();
    Ok(PointCloud { points, frame: Frame::Frustum })
}

/// Subtracts the centroid; returns the centred cloud and the centroid.
pub fn mean_center(cloud: &PointCloud) -> Result<(PointCloud, Vec3), GeometryError> {
    let c = cloud.centroid()?;
    let points = cloud.points.iter().map(|&p| p - c).collect();
    Ok((PointCloud { points, frame: Frame::FrustumMean }, c))
}

/// Gram-Schmidt conversion of a 6-vector to a rotation.
///
/// `b1 = normalize(v[0..3])`, `b2 = normalize(v[3..6] − (b1·v[3..6]) b1)`,
/// `b3 = b1 × b2`; the columns `(b1, b2, b3)` form the matrix. Scale of
/// either half of the input is irrelevant.
pub fn rot6d_to_matrix(v: [f64; 6]) -> Result<Rotation3, GeometryError> {
    let a = Vec3::new(v[0], v[1], v[2]);
    let w = Vec3::new(v[3], v[4], v[5]);
    let b1 = a.normalized(SIXD_MIN_NORM).ok_or(GeometryError::DegenerateSixD {
        norm: a.norm(),
        min: SIXD_MIN_NORM,
    })?;
    let resid = w - b1 * b1.dot(w);
    let b2 = resid.normalized(SIXD_MIN_NORM).ok_or(GeometryError::DegenerateSixD {
        norm: resid.norm(),
        min: SIXD_MIN_NORM,
    })?;
    let b3 = b1.cross(b2);
    // Orthonormal by construction; bypass the tolerance check.
    Ok(Rotation3 { m: Mat3::from_cols([b1, b2, b3]) })
}

/// Canonicalizes a frustum-frame cloud: `P_cn = (P_f − t) * R`.
///
/// `pose.translation` is the full frustum-frame translation
/// `t_f = mean(P_f) + Δt`, not the residual Δt alone.
pub fn canonicalize(cloud: &PointCloud, pose: &RigidPose) -> PointCloud {
    let points = cloud.points.iter().map(|&p| pose.apply(p)).collect();
    PointCloud { points, frame: Frame::Canonical }
}

/// Recovers viewer-centred points: `S_vc = (S_cn * Rᵀ + t) * R(θ_f)`.
///
/// Exact inverse of `canonicalize(rotate_about_up(·, −θ_f), pose)`.
pub fn decanonicalize(cloud: &PointCloud, pose: &RigidPose, theta_f: f64) -> PointCloud {
    let back = Mat3::rotation_z(theta_f);
    let points = cloud
        .points
        .iter()
        .map(|&p| back.apply_row(pose.apply_inverse(p)))
        .collect();
    PointCloud { points, frame: Frame::ViewerCentred }
}

/// Axis-aligned bounds box of a canonical cloud, plus a degeneracy flag.
#[derive(Clone, Copy, Debug)]
pub struct CanonicalBox {
    pub box3: Box3,
    /// Set when any raw extent fell below [`BOX_MIN_EXTENT`] and was clamped.
    pub degenerate: bool,
}

/// Fits a box to canonical points by per-axis min/max bounds; yaw is 0 by
/// definition of the canonical frame.
pub fn box_from_canonical(cloud: &PointCloud) -> Result<CanonicalBox, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut lo = cloud.points[0];
    let mut hi = cloud.points[0];
    for &p in &cloud.points[1..] {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let raw = hi - lo;
    let degenerate = raw.x < BOX_MIN_EXTENT || raw.y < BOX_MIN_EXTENT || raw.z < BOX_MIN_EXTENT;
    let dims = Vec3::new(
        raw.x.max(BOX_MIN_EXTENT),
        raw.y.max(BOX_MIN_EXTENT),
        raw.z.max(BOX_MIN_EXTENT),
    );
    let center = (lo + hi) * 0.5;
    let box3 = Box3::new(center, dims, 0.0).expect("clamped dims are positive");
    Ok(CanonicalBox { box3, degenerate })
}
