//! Simulated lidar: ring discretization and stride subsampling.
//!
//! Dense raycast partials look nothing like real scans, so training data
//! is thinned to a scan pattern: points are binned by elevation into
//! rings, every `ring_stride`-th ring is kept, and within a kept ring
//! every `point_stride`-th point survives after an azimuth sort. Offsets
//! are drawn from a per-sample seed, which keeps runs reproducible while
//! still varying the pattern across samples.

use crate::geometry::{PointCloud, Vec3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("point at the origin has no direction")]
    OriginPoint,
    #[error("scan pattern: {0}")]
    BadPattern(String),
    #[error("cannot subsample an empty cloud")]
    EmptyInput,
    #[error("no point survives the stride selection")]
    EmptySelection,
}

/// Ring/stride description of a scan. `vfov` is in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    pub n_bins: usize,
    pub ring_stride: usize,
    pub point_stride: usize,
    pub vfov: (f64, f64),
}

impl ScanPattern {
    pub fn new(
        n_bins: usize,
        ring_stride: usize,
        point_stride: usize,
        vfov: (f64, f64),
    ) -> Result<Self, LidarError> {
        let p = ScanPattern { n_bins, ring_stride, point_stride, vfov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LidarError> {
        if self.n_bins < 1 {
            return Err(LidarError::BadPattern("n_bins must be at least 1".into()));
        }
        if self.ring_stride < 1 || self.point_stride < 1 {
            return Err(LidarError::BadPattern("strides must be at least 1".into()));
        }
        if !(self.vfov.0 < self.vfov.1) || !self.vfov.0.is_finite() || !self.vfov.1.is_finite() {
            return Err(LidarError::BadPattern(format!(
                "vfov must satisfy min < max, got ({}, {})",
                self.vfov.0, self.vfov.1
            )));
        }
        Ok(())
    }

    /// Elevation coverage in radians.
    pub fn vfov_rad(&self) -> (f64, f64) {
        (self.vfov.0.to_radians(), self.vfov.1.to_radians())
    }
}

/// Spherical coordinates (range, azimuth, elevation) of a sensor-frame
/// point: r = ‖p‖, θ = atan2(y, x), φ = asin(z/r).
pub fn to_spherical(p: Vec3) -> Result<(f64, f64, f64), LidarError> {
    let r = p.norm();
    if r == 0.0 {
        return Err(LidarError::OriginPoint);
    }
    let theta = p.y.atan2(p.x);
    let phi = (p.z / r).clamp(-1.0, 1.0).asin();
    Ok((r, theta, phi))
}

/// Ring index for one elevation, plus whether it fell outside the fov and
/// was clamped to an edge bin. `φ = vfov_max` is in range (top ring).
pub fn ring_for(phi: f64, pattern: &ScanPattern) -> (usize, bool) {
    let (lo, hi) = pattern.vfov_rad();
    let bin_width = (hi - lo) / pattern.n_bins as f64;
    if phi < lo {
        return (0, true);
    }
    if phi > hi {
        return (pattern.n_bins - 1, true);
    }
    let ring = ((phi - lo) / bin_width) as usize;
    (ring.min(pattern.n_bins - 1), false)
}

/// Per-point ring indices. Total: origin points (no defined elevation)
/// are treated as elevation 0.
#[derive(Clone, Debug)]
pub struct RingAssignment {
    pub rings: Vec<usize>,
    /// Points whose elevation fell outside the fov.
    pub clamped: usize,
}

pub fn assign_rings(points: &[Vec3], pattern: &ScanPattern) -> RingAssignment {
    let mut rings = Vec::with_capacity(points.len());
    let mut clamped = 0;
    for &p in points {
        let phi = to_spherical(p).map(|(_, _, phi)| phi).unwrap_or(0.0);
        let (ring, out) = ring_for(phi, pattern);
        rings.push(ring);
        clamped += out as usize;
    }
    RingAssignment { rings, clamped }
}

/// Seeded subsample: ring offset and per-ring point offsets drawn from
/// `seed`, so one u64 fixes the whole selection.
pub fn subsample(
    cloud: &PointCloud,
    pattern: &ScanPattern,
    seed: u64,
) -> Result<PointCloud, LidarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring_offset = rng.random_range(0..pattern.ring_stride);
    subsample_impl(cloud, pattern, ring_offset, |_| rng.random_range(0..pattern.point_stride))
}

/// Deterministic variant with explicit offsets, shared by tests and
/// callers that manage their own randomness.
pub fn subsample_with_offsets(
    cloud: &PointCloud,
    pattern: &ScanPattern,
    ring_offset: usize,
    point_offset: usize,
) -> Result<PointCloud, LidarError> {
    if ring_offset >= pattern.ring_stride || point_offset >= pattern.point_stride {
        return Err(LidarError::BadPattern("offset must be below its stride".into()));
    }
    subsample_impl(cloud, pattern, ring_offset, |_| point_offset)
}

fn subsample_impl(
    cloud: &PointCloud,
    pattern: &ScanPattern,
    ring_offset: usize,
    mut point_offset_for: impl FnMut(usize) -> usize,
) -> Result<PointCloud, LidarError> {
    pattern.validate()?;
    if cloud.points.is_empty() {
        return Err(LidarError::EmptyInput);
    }
    let assignment = assign_rings(&cloud.points, pattern);
    let mut by_ring: Vec<Vec<(f64, usize)>> = vec![Vec::new(); pattern.n_bins];
    for (idx, (&ring, &p)) in assignment.rings.iter().zip(&cloud.points).enumerate() {
        let theta = p.y.atan2(p.x);
        by_ring[ring].push((theta, idx));
    }
    let mut kept = Vec::new();
    for (ring, members) in by_ring.iter_mut().enumerate() {
        if ring % pattern.ring_stride != ring_offset {
            continue;
        }
        // Offsets are drawn for every kept ring, empty or not, so rng
        // consumption depends only on the pattern.
        let offset = point_offset_for(ring);
        debug_assert!(offset < pattern.point_stride);
        members.sort_by(|a, b| a.partial_cmp(b).expect("finite azimuths"));
        for (pos, &(_, idx)) in members.iter().enumerate() {
            if pos >= offset && (pos - offset) % pattern.point_stride == 0 {
                kept.push(cloud.points[idx]);
            }
        }
    }
    if kept.is_empty() {
        return Err(LidarError::EmptySelection);
    }
    Ok(PointCloud::new(kept, cloud.frame))
}
