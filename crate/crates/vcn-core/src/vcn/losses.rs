//! Training losses with hand-derived gradients: completion and retention
//! Chamfer terms, an axis-extent term, and the pose terms (smooth-L1
//! translation, clamped geodesic rotation through the 6D parameters).
//! One assembly path serves both the value-only and the backward calls so
//! the two can never drift apart.

use super::model::{
    cap_points, cloud_to_tensor, complete_with_trace, completion_backward, decode_pose,
    pose_head_backward, pose_head_traced, GradSink,
};
use super::{VcnConfig, VcnError};
use crate::geometry::{
    canonicalize, decanonicalize, frustum_angle, mean_center, rotate_about_up, Mat3, PointCloud,
    RigidPose, Rotation3, Vec3, BOX_MIN_EXTENT, SIXD_MIN_NORM,
};
use crate::knn::{brute_nearest, GridIndex};
use crate::nncore::{ParamStore, Scalar, Tensor2};
use crate::postproc::knn_retain_indices;
use crate::synthgen::SampleRecord;

/// Cosine margin of the rotation loss: the relative-rotation cosine is
/// clamped to ±(1 − this) so the arccos derivative stays finite. At the
/// clamp the loss is flat and the gradient is zero.
pub const GEODESIC_CLAMP: f64 = 1e-7;

/// Beyond this many reference points the nearest-neighbour scans switch
/// from the brute loop to the grid index; both are exact.
const CHAMFER_BRUTE_LIMIT: usize = 2000;

/// A direction also switches to the grid when queries × reference points
/// exceed this, so neither lopsided pairing degenerates to a full scan.
const CHAMFER_PAIR_LIMIT: usize = 1_000_000;

fn wants_grid(searched: usize, queries: usize) -> bool {
    searched > CHAMFER_BRUTE_LIMIT || searched.saturating_mul(queries) > CHAMFER_PAIR_LIMIT
}

/// Geodesic angle between two rotations with the clamped cosine, so a
/// perfect match reads √(2 · [`GEODESIC_CLAMP`]) rather than zero.
pub fn loss_geodesic(pred: &Rotation3, target: &Rotation3) -> f64 {
    geodesic_with_grad(pred.matrix(), target.matrix()).0
}

/// Loss plus d(loss)/d(pred entries); zero gradient in the clamp band.
pub(crate) fn geodesic_with_grad(pred: &Mat3, target: &Mat3) -> (f64, Mat3) {
    let mut dot = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            dot += pred.m[i][j] * target.m[i][j];
        }
    }
    let c_raw = (dot - 1.0) / 2.0;
    let lim = 1.0 - GEODESIC_CLAMP;
    let c = c_raw.clamp(-lim, lim);
    let loss = c.acos();
    let mut grad = Mat3 { m: [[0.0; 3]; 3] };
    if c_raw.abs() < lim {
        // d acos(c)/dc = −1/√(1−c²), dc/dP = target/2.
        let scale = -0.5 / (1.0 - c * c).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                grad.m[i][j] = scale * target.m[i][j];
            }
        }
    }
    (loss, grad)
}

/// Backpropagates a gradient in the orthonormal basis columns to the raw
/// 6D parameters. `six` must be the exact input whose forward pass
/// succeeded; the two normalizations pass the same minimum-norm gate.
pub(crate) fn rot6d_backward(six: [f64; 6], grad: &Mat3) -> [f64; 6] {
    let a = Vec3::new(six[0], six[1], six[2]);
    let w = Vec3::new(six[3], six[4], six[5]);
    let b1 = a.normalized(SIXD_MIN_NORM).expect("checked by the forward pass");
    let u = w - b1 * b1.dot(w);
    let b2 = u.normalized(SIXD_MIN_NORM).expect("checked by the forward pass");
    let g1 = grad.col(0);
    let g2 = grad.col(1);
    let g3 = grad.col(2);
    // b3 = b1 × b2 routes the third column's gradient onto the first two.
    let h1 = g1 + b2.cross(g3);
    let h2 = g2 + g3.cross(b1);
    let d_u = (h2 - b2 * h2.dot(b2)) * (1.0 / u.norm());
    let d_w = d_u - b1 * b1.dot(d_u);
    let d_b1 = h1 - w * b1.dot(d_u) - d_u * b1.dot(w);
    let d_a = (d_b1 - b1 * d_b1.dot(b1)) * (1.0 / a.norm());
    [d_a.x, d_a.y, d_a.z, d_w.x, d_w.y, d_w.z]
}

/// Unit-threshold Huber value and slope.
fn huber(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Smooth-L1 between equal-length vectors: mean over components of the
/// unit-threshold Huber residual.
pub fn loss_smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64, VcnError> {
    Ok(smooth_l1_parts(pred, target)?.0)
}

pub(crate) fn smooth_l1_parts(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), VcnError> {
    if pred.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    if pred.len() != target.len() {
        return Err(VcnError::BadConfig(format!(
            "smooth-l1 lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let (v, dv) = huber(p - t);
        total += v;
        grads.push(dv / n);
    }
    Ok((total / n, grads))
}

fn nearest_in(points: &[Vec3], grid: Option<&GridIndex>, q: Vec3) -> (usize, f64) {
    match grid {
        Some(g) => g.nearest(q),
        None => brute_nearest(points, q).expect("guarded non-empty"),
    }
}

/// Chamfer distance: the two directed mean nearest-neighbour distances
/// added together, plain L2 (not squared).
pub fn loss_chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, VcnError> {
    Ok(chamfer_with_grad(a, b)?.0)
}

/// Chamfer value plus d(loss)/d(first cloud). The reference cloud takes
/// no gradient. Zero-distance matches contribute a zero subgradient.
pub(crate) fn chamfer_with_grad(
    s: &PointCloud,
    g: &PointCloud,
) -> Result<(f64, Vec<Vec3>), VcnError> {
    if s.is_empty() || g.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    let sn = s.points.len() as f64;
    let gn = g.points.len() as f64;
    let grid_g =
        wants_grid(g.points.len(), s.points.len()).then(|| GridIndex::build(&g.points));
    let grid_s =
        wants_grid(s.points.len(), g.points.len()).then(|| GridIndex::build(&s.points));
    let mut grads = vec![Vec3::ZERO; s.points.len()];
    let mut sum_sg = 0.0;
    for (i, &p) in s.points.iter().enumerate() {
        let (j, d) = nearest_in(&g.points, grid_g.as_ref(), p);
        sum_sg += d;
        if d > 0.0 {
            grads[i] = grads[i] + (p - g.points[j]) * (1.0 / (d * sn));
        }
    }
    let mut sum_gs = 0.0;
    for &q in &g.points {
        let (i, d) = nearest_in(&s.points, grid_s.as_ref(), q);
        sum_gs += d;
        if d > 0.0 {
            grads[i] = grads[i] + (s.points[i] - q) * (1.0 / (d * gn));
        }
    }
    Ok((sum_sg / sn + sum_gs / gn, grads))
}

/// Axis-extent loss against the labelled dims, measured on the canonical
/// completion with the same floor the box fit uses. Axes pinched to the
/// floor are flat; the others route their slope to the two extreme
/// points of the axis.
pub(crate) fn dims_loss_with_grad(
    s_cn: &PointCloud,
    gt_dims: Vec3,
) -> Result<(f64, Vec<Vec3>), VcnError> {
    if s_cn.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    let target = gt_dims.to_array();
    let mut grads = vec![Vec3::ZERO; s_cn.points.len()];
    let mut total = 0.0;
    for axis in 0..3 {
        let coord = |p: &Vec3| match axis {
            0 => p.x,
            1 => p.y,
            _ => p.z,
        };
        let (mut lo, mut hi) = (0usize, 0usize);
        for (i, p) in s_cn.points.iter().enumerate() {
            if coord(p) < coord(&s_cn.points[lo]) {
                lo = i;
            }
            if coord(p) > coord(&s_cn.points[hi]) {
                hi = i;
            }
        }
        let extent = coord(&s_cn.points[hi]) - coord(&s_cn.points[lo]);
        let clamped = extent < BOX_MIN_EXTENT;
        let d = if clamped { BOX_MIN_EXTENT } else { extent };
        let (v, dv) = huber(d - target[axis]);
        total += v / 3.0;
        if !clamped {
            let g = dv / 3.0;
            match axis {
                0 => {
                    grads[hi].x += g;
                    grads[lo].x -= g;
                }
                1 => {
                    grads[hi].y += g;
                    grads[lo].y -= g;
                }
                _ => {
                    grads[hi].z += g;
                    grads[lo].z -= g;
                }
            }
        }
    }
    Ok((total, grads))
}

/// Frustum-frame supervision targets decomposed from a labelled pose,
/// relative to an observed cloud.
#[derive(Clone, Debug)]
pub struct PoseTargets {
    /// Frustum azimuth of the observed cloud.
    pub theta_f: f64,
    /// Centroid of the frustum-rotated cloud.
    pub mean_f: Vec3,
    /// Frustum → canonical rotation the head should recover.
    pub rot_f: Rotation3,
    /// Frustum-frame box centre.
    pub t_f: Vec3,
    /// Regression target for the head's translation output.
    pub delta_t: Vec3,
}

/// Splits a viewer → canonical pose into the frustum-frame targets. The
/// same observed cloud must feed the head for the targets to line up.
pub fn pose_targets(observed: &PointCloud, gt_pose: &RigidPose) -> Result<PoseTargets, VcnError> {
    let theta_f = frustum_angle(observed)?;
    let p_f = rotate_about_up(observed, -theta_f)?;
    let (_, mean_f) = mean_center(&p_f)?;
    let rot_f = Rotation3::about_up(theta_f).then(&gt_pose.rotation);
    let t_f = Rotation3::about_up(-theta_f).apply(gt_pose.translation);
    Ok(PoseTargets { theta_f, mean_f, rot_f, t_f, delta_t: t_f - mean_f })
}

/// Proposal for one sample in the form the losses score: a canonical
/// completion plus the frustum-frame pose quantities.
#[derive(Clone, Debug)]
pub struct Predictions {
    /// Canonical completion.
    pub s_cn: PointCloud,
    /// Translation output (input centroid to frustum-frame box centre).
    pub delta_t: Vec3,
    /// Predicted frustum → canonical rotation.
    pub rot_f: Rotation3,
}

/// Per-term loss values; `total` mixes them with the configured weights.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub complete: f64,
    pub knn: f64,
    pub dims: f64,
    pub pose_t: f64,
    pub pose_r: f64,
    pub total: f64,
}

struct LossGrads {
    /// d(total)/d(viewer-frame completion points).
    s_vc: Vec<Vec3>,
    /// d(total)/d(canonical points), the extent part only.
    s_cn_extra: Vec<Vec3>,
    /// d(total)/d(translation output), weight already applied.
    delta_t: Vec3,
    /// d(total)/d(predicted rotation entries).
    rot: Mat3,
}

/// One assembly path for every loss consumer. The generated cloud is
/// compared in the viewer frame; the retention term compares the subsets
/// of both clouds that sit near the observed points; the extent term
/// reads the canonical completion directly.
fn assemble(
    cfg: &VcnConfig,
    sample: &SampleRecord,
    capped: &PointCloud,
    targets: &PoseTargets,
    s_cn: &PointCloud,
    delta_t: Vec3,
    rot: &Rotation3,
) -> Result<(LossBreakdown, LossGrads), VcnError> {
    let s_vc = decanonicalize(s_cn, &sample.gt_pose, 0.0);
    let (l_complete, mut grad_vc) = chamfer_with_grad(&s_vc, &sample.complete)?;
    let s_keep = knn_retain_indices(&s_vc, capped, cfg.knn_k)?;
    let g_keep = knn_retain_indices(&sample.complete, capped, cfg.knn_k)?;
    let s_sel =
        PointCloud::new(s_keep.iter().map(|&i| s_vc.points[i]).collect(), s_vc.frame);
    let g_sel = PointCloud::new(
        g_keep.iter().map(|&i| sample.complete.points[i]).collect(),
        sample.complete.frame,
    );
    let (l_knn, knn_grads) = chamfer_with_grad(&s_sel, &g_sel)?;
    for (slot, &idx) in knn_grads.iter().zip(&s_keep) {
        grad_vc[idx] = grad_vc[idx] + *slot;
    }
    let (l_dims, dims_grads) = dims_loss_with_grad(s_cn, sample.gt_box.dims)?;
    let (l_t, t_parts) = smooth_l1_parts(&delta_t.to_array(), &targets.delta_t.to_array())?;
    let (l_r, rot_grad) = geodesic_with_grad(rot.matrix(), targets.rot_f.matrix());
    let total = l_complete + l_knn + l_dims + cfg.alpha * l_t + l_r;
    Ok((
        LossBreakdown {
            complete: l_complete,
            knn: l_knn,
            dims: l_dims,
            pose_t: l_t,
            pose_r: l_r,
            total,
        },
        LossGrads {
            s_vc: grad_vc,
            s_cn_extra: dims_grads,
            delta_t: Vec3::new(t_parts[0], t_parts[1], t_parts[2]) * cfg.alpha,
            rot: rot_grad,
        },
    ))
}

fn tensor_is_finite<S: Scalar>(t: &Tensor2<S>) -> bool {
    t.values().iter().all(|&v| Scalar::to_f64(v).is_finite())
}

fn loss_impl<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    sample: &SampleRecord,
    seed: u64,
    sink: Option<&mut GradSink<S>>,
) -> Result<LossBreakdown, VcnError> {
    if sample.partial.is_empty() || sample.complete.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    let capped = cap_points(&sample.partial, cfg.m_max, seed);
    let targets = pose_targets(&capped, &sample.gt_pose)?;
    // The pose head sees the mean-centred frustum cloud.
    let p_f = rotate_about_up(&capped, -targets.theta_f)?;
    let (p_fm, _) = mean_center(&p_f)?;
    let (out9, pose_tape) = pose_head_traced(params, cfg, cloud_to_tensor::<S>(&p_fm)?)?;
    if !tensor_is_finite(&out9) {
        return Err(VcnError::NonFinite);
    }
    let est = decode_pose(&out9)?;
    // Completion runs through the labelled pose.
    let p_cn = canonicalize(&capped, &sample.gt_pose);
    let trace = complete_with_trace(params, cfg, &p_cn)?;
    if !trace.s_cn.is_finite() {
        return Err(VcnError::NonFinite);
    }
    let (bd, grads) =
        assemble(cfg, sample, &capped, &targets, &trace.s_cn, est.delta_t, &est.rotation)?;
    if let Some(sink) = sink {
        // Viewer-frame completion gradients map back through the constant
        // rigid transform (d s_vc/d s_cn is the transposed rotation); the
        // extent part is already canonical.
        let rot_gt = &sample.gt_pose.rotation;
        let grad_cn: Vec<Vec3> = grads
            .s_vc
            .iter()
            .zip(&grads.s_cn_extra)
            .map(|(gv, gc)| rot_gt.apply(*gv) + *gc)
            .collect();
        completion_backward(params, cfg, &trace, &grad_cn, sink)?;
        // Head output order: 3 translation slots, then the 6D rotation.
        let six_grad = rot6d_backward(est.rot6d, &grads.rot);
        let mut nine = [0.0; 9];
        nine[0] = grads.delta_t.x;
        nine[1] = grads.delta_t.y;
        nine[2] = grads.delta_t.z;
        nine[3..].copy_from_slice(&six_grad);
        let grad9 = Tensor2::from_f64s(1, 9, &nine)?;
        pose_head_backward(params, cfg, &pose_tape, &grad9, sink)?;
    }
    Ok(bd)
}

/// Loss components of one sample at the current parameters, no backward.
pub fn loss_value<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    sample: &SampleRecord,
    seed: u64,
) -> Result<LossBreakdown, VcnError> {
    loss_impl(params, cfg, sample, seed, None)
}

/// Loss plus one backward pass; gradients are accumulated into the grad
/// buffers, so callers zero them once per optimizer step.
pub fn loss_total<S: Scalar>(
    params: &mut ParamStore<S>,
    cfg: &VcnConfig,
    sample: &SampleRecord,
    seed: u64,
) -> Result<LossBreakdown, VcnError> {
    let mut sink = GradSink::new();
    let bd = loss_impl(params, cfg, sample, seed, Some(&mut sink))?;
    for (name, grad) in sink {
        params.get_mut(&name)?.accumulate_grad(&grad);
    }
    Ok(bd)
}

/// Scores proposed predictions against a sample without touching the
/// network, capping the observed cloud exactly as training does.
pub fn score_predictions(
    cfg: &VcnConfig,
    sample: &SampleRecord,
    preds: &Predictions,
    seed: u64,
) -> Result<LossBreakdown, VcnError> {
    if sample.partial.is_empty() || sample.complete.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    let capped = cap_points(&sample.partial, cfg.m_max, seed);
    let targets = pose_targets(&capped, &sample.gt_pose)?;
    let (bd, _) =
        assemble(cfg, sample, &capped, &targets, &preds.s_cn, preds.delta_t, &preds.rot_f)?;
    Ok(bd)
}
