//! The pose-estimating surface completion network.
//!
//! Two halves share one parameter store: a pose head that maps a
//! frustum-mean cloud to a 9D output (3D translation delta + 6D rotation),
//! and a two-stage point encoder that maps a canonical cloud to a fixed
//! number of canonical surface points. [`run_vcn_cn`] completes with a
//! known ground-truth pose; [`run_vcn_vc`] estimates the pose first and
//! returns the completion, the recovered viewer→canonical pose, and a
//! bounding box.
//!
//! Everything is generic over the nncore scalar: f32 for fast training
//! and inference, f64 under the finite-difference gradient checker. The
//! geometric ends (frames, losses, boxes) always compute in f64.

mod losses;
mod model;

pub use losses::{
    loss_chamfer, loss_geodesic, loss_smooth_l1, loss_total, loss_value, pose_targets,
    score_predictions, LossBreakdown, PoseTargets, Predictions, GEODESIC_CLAMP,
};
pub use model::{
    cap_points, complete, complete_with_trace, init_params, param_count, pose_head, run_vcn_cn,
    run_vcn_vc, run_vcn_vc_traced, validate_store, yaw_from_rotation, ForwardTrace, PoseEstimate,
    VcnVcOutput,
};

use crate::geometry::GeometryError;
use crate::nncore::NnError;
use crate::postproc::PostprocError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VcnError {
    #[error("network input cloud is empty")]
    EmptyInput,
    #[error("non-finite values in the network output")]
    NonFinite,
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
}

/// Widths and knobs of the network. Layer lists give the output width of
/// each dense layer; leaky ReLU sits between layers inside a block, never
/// after a block's last layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcnConfig {
    /// Per-point pose MLP (input width 3).
    pub pose_block1: Vec<usize>,
    /// Post-pooling pose MLP; the last width must be 9 (3 translation
    /// components + 6 rotation components).
    pub pose_block2: Vec<usize>,
    /// First encoder stage, per point (input width 3).
    pub enc_stage1: Vec<usize>,
    /// Second encoder stage, per point on features concatenated with the
    /// stage-1 global vector.
    pub enc_stage2: Vec<usize>,
    /// Hidden widths of the head that maps the global vector to points;
    /// an output layer of width `3 * n_out` is appended implicitly.
    pub final_hidden: Vec<usize>,
    /// Number of generated surface points N.
    pub n_out: usize,
    /// Pose-loss translation weight.
    pub alpha: f64,
    /// Leaky ReLU negative slope.
    pub leaky_slope: f64,
    /// Input cap: larger clouds are randomly subsampled to this size.
    pub m_max: usize,
    /// k used when selecting generated points near the observed input for
    /// the retention loss.
    pub knn_k: usize,
}

impl Default for VcnConfig {
    fn default() -> Self {
        VcnConfig {
            pose_block1: vec![64, 128, 256],
            pose_block2: vec![256, 128, 9],
            enc_stage1: vec![128, 256],
            enc_stage2: vec![512, 1024],
            final_hidden: vec![1024],
            n_out: 1024,
            alpha: 1.0,
            leaky_slope: 0.1,
            m_max: 2048,
            knn_k: 5,
        }
    }
}

impl VcnConfig {
    /// Miniature configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        VcnConfig {
            pose_block1: vec![8, 12],
            pose_block2: vec![12, 9],
            enc_stage1: vec![8, 12],
            enc_stage2: vec![16, 16],
            final_hidden: vec![16],
            n_out: 8,
            alpha: 1.0,
            leaky_slope: 0.1,
            m_max: 2048,
            knn_k: 2,
        }
    }

    pub fn validate(&self) -> Result<(), VcnError> {
        let blocks: [(&str, &[usize]); 5] = [
            ("pose_block1", &self.pose_block1),
            ("pose_block2", &self.pose_block2),
            ("enc_stage1", &self.enc_stage1),
            ("enc_stage2", &self.enc_stage2),
            ("final_hidden", &self.final_hidden),
        ];
        for (name, widths) in blocks {
            if widths.is_empty() {
                return Err(VcnError::BadConfig(format!("{name} has no layers")));
            }
            if widths.iter().any(|&w| w < 1) {
                return Err(VcnError::BadConfig(format!("{name} has a zero width")));
            }
        }
        if self.pose_block2.last() != Some(&9) {
            return Err(VcnError::BadConfig(format!(
                "pose_block2 must end in 9, got {:?}",
                self.pose_block2
            )));
        }
        if self.n_out < 1 {
            return Err(VcnError::BadConfig("n_out must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(VcnError::BadConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(VcnError::BadConfig(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.m_max < 1 {
            return Err(VcnError::BadConfig("m_max must be at least 1".into()));
        }
        if self.knn_k < 1 {
            return Err(VcnError::BadConfig("knn_k must be at least 1".into()));
        }
        Ok(())
    }
}


#[cfg(test)]
pub(crate) mod testutil {
    //! Shared fixtures for the network and loss tests.

    use crate::geometry::{Box3, Frame, PointCloud, RigidPose, Rotation3, Vec3};
    use crate::synthgen::SampleRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Absolute difference between two angles on the circle.
    pub fn ang_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d)
    }

    pub fn random_cloud(n: usize, frame: Frame, seed: u64, spread: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                )
            })
            .collect();
        PointCloud::new(points, frame)
    }

    /// Surface lattice of an axis-aligned box centred at the origin.
    /// Face-boundary coordinates are exact, so the extents equal `dims`;
    /// interior coordinates carry a small deterministic stretch so that
    /// no two inter-point distances tie exactly.
    pub fn box_lattice(dims: Vec3, per_edge: usize) -> Vec<Vec3> {
        assert!(per_edge >= 2);
        let axis_coords = |extent: f64, axis: usize| -> Vec<f64> {
            (0..per_edge)
                .map(|i| {
                    let t = i as f64 / (per_edge - 1) as f64;
                    let mut x = extent * (t - 0.5);
                    if i > 0 && i + 1 < per_edge {
                        x += extent * 0.02 * ((i * i + 3 * i + axis) as f64).sin();
                    }
                    x
                })
                .collect()
        };
        let xs = axis_coords(dims.x, 0);
        let ys = axis_coords(dims.y, 1);
        let zs = axis_coords(dims.z, 2);
        let mut pts = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                for (k, &z) in zs.iter().enumerate() {
                    let edge = |n: usize| n == 0 || n + 1 == per_edge;
                    if edge(i) || edge(j) || edge(k) {
                        pts.push(Vec3::new(x, y, z));
                    }
                }
            }
        }
        pts
    }

    pub fn toy_sample() -> SampleRecord {
        toy_sample_at(Vec3::new(9.0, 3.0, 0.75), 0.55)
    }

    /// Box-surface car stand-in at a given centre and yaw. The partial
    /// view keeps the rear half plus the roof of the canonical surface.
    pub fn toy_sample_at(center: Vec3, yaw: f64) -> SampleRecord {
        let dims = Vec3::new(4.2, 1.8, 1.5);
        let canonical = box_lattice(dims, 7);
        let pose = RigidPose::new(Rotation3::about_up(-yaw), center);
        let viewer: Vec<Vec3> = canonical.iter().map(|&p| pose.apply_inverse(p)).collect();
        let mut partial = Vec::new();
        for (c, v) in canonical.iter().zip(&viewer) {
            if c.x < -1e-9 || c.z > dims.z / 2.0 - 1e-9 {
                partial.push(*v);
            }
        }
        assert!(partial.len() >= 50);
        SampleRecord {
            partial: PointCloud::new(partial, Frame::ViewerCentred),
            complete: PointCloud::new(viewer, Frame::ViewerCentred),
            gt_pose: pose,
            gt_box: Box3::new(center, dims, yaw).expect("valid box"),
        }
    }
}
