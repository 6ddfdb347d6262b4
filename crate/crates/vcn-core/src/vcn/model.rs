//! Network substrate: parameter layout, forward and backward passes, and
//! the two completion entry points (labelled pose and estimated pose).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{VcnConfig, VcnError};
use crate::geometry::{
    box_from_canonical, canonicalize, decanonicalize, frustum_angle, mean_center,
    rot6d_to_matrix, rotate_about_up, Box3, Frame, PointCloud, RigidPose, Rotation3, Vec3,
};
use crate::nncore::{
    concat_broadcast, concat_broadcast_backward, dense_backward, dense_forward, leaky_relu,
    leaky_relu_backward, max_pool_backward, max_pool_points, NnError, ParamStore, Scalar, Tensor2,
};

/// Gradient accumulator keyed by parameter name. Backward passes add into
/// it so they only need a shared borrow of the store; the caller folds the
/// sink into the tensors' grad buffers afterwards.
pub(crate) type GradSink<S> = BTreeMap<String, Tensor2<S>>;

pub(crate) fn sink_add<S: Scalar>(sink: &mut GradSink<S>, name: String, grad: Tensor2<S>) {
    match sink.get_mut(&name) {
        Some(t) => {
            debug_assert_eq!(t.shape(), grad.shape());
            for (acc, &g) in t.values_mut().iter_mut().zip(grad.values()) {
                *acc = *acc + g;
            }
        }
        None => {
            sink.insert(name, grad);
        }
    }
}

fn tensor_add<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Tensor2<S> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = a.clone();
    for (o, &v) in out.values_mut().iter_mut().zip(b.values()) {
        *o = *o + v;
    }
    out
}

pub(crate) fn cloud_to_tensor<S: Scalar>(cloud: &PointCloud) -> Result<Tensor2<S>, VcnError> {
    if cloud.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    let mut vals = Vec::with_capacity(cloud.points.len() * 3);
    for p in &cloud.points {
        vals.push(S::from_f64(p.x));
        vals.push(S::from_f64(p.y));
        vals.push(S::from_f64(p.z));
    }
    Ok(Tensor2::from_values(cloud.points.len(), 3, vals)?)
}

fn push_block(specs: &mut Vec<(String, usize, usize)>, prefix: &str, input: usize, widths: &[usize]) {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        specs.push((format!("{prefix}.{i}"), fan_in, w));
        fan_in = w;
    }
}

/// Every dense layer as (name, fan_in, fan_out), in the fixed block order
/// that also fixes the initialization draw order.
fn layer_specs(cfg: &VcnConfig) -> Result<Vec<(String, usize, usize)>, VcnError> {
    cfg.validate()?;
    let mut specs = Vec::new();
    push_block(&mut specs, "pose1", 3, &cfg.pose_block1);
    let pooled = *cfg.pose_block1.last().expect("validated non-empty");
    push_block(&mut specs, "pose2", pooled, &cfg.pose_block2);
    push_block(&mut specs, "enc1", 3, &cfg.enc_stage1);
    let c = *cfg.enc_stage1.last().expect("validated non-empty");
    push_block(&mut specs, "enc2", 2 * c, &cfg.enc_stage2);
    let mut final_widths = cfg.final_hidden.clone();
    final_widths.push(3 * cfg.n_out);
    let g = *cfg.enc_stage2.last().expect("validated non-empty");
    push_block(&mut specs, "final", g, &final_widths);
    Ok(specs)
}

/// Total number of scalar parameters the config describes.
pub fn param_count(cfg: &VcnConfig) -> Result<usize, VcnError> {
    Ok(layer_specs(cfg)?.iter().map(|(_, i, o)| (i + 1) * o).sum())
}

/// Fresh parameters: Xavier-uniform weights, zero biases, drawn from a
/// seeded stream in block order. The same seed gives the same draws at
/// either scalar width.
pub fn init_params<S: Scalar>(cfg: &VcnConfig, seed: u64) -> Result<ParamStore<S>, VcnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, fan_in, fan_out) in layer_specs(cfg)? {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut vals = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            vals.push(S::from_f64(rng.random_range(-a..a)));
        }
        store.register(&format!("{name}.w"), Tensor2::from_values(fan_in, fan_out, vals)?)?;
        store.register(&format!("{name}.b"), Tensor2::zeros(1, fan_out))?;
    }
    Ok(store)
}

/// Checks that a store holds exactly the tensors the config expects, with
/// the expected shapes. Run it after loading a checkpoint.
pub fn validate_store<S: Scalar>(cfg: &VcnConfig, store: &ParamStore<S>) -> Result<(), VcnError> {
    let specs = layer_specs(cfg)?;
    if store.len() != 2 * specs.len() {
        return Err(VcnError::BadConfig(format!(
            "store holds {} tensors, config describes {}",
            store.len(),
            2 * specs.len()
        )));
    }
    for (name, fan_in, fan_out) in specs {
        let w = store
            .get(&format!("{name}.w"))
            .map_err(|_| VcnError::BadConfig(format!("store is missing {name}.w")))?;
        if w.shape() != (fan_in, fan_out) {
            return Err(VcnError::BadConfig(format!(
                "{name}.w is {:?}, config wants ({fan_in}, {fan_out})",
                w.shape()
            )));
        }
        let b = store
            .get(&format!("{name}.b"))
            .map_err(|_| VcnError::BadConfig(format!("store is missing {name}.b")))?;
        if b.shape() != (1, fan_out) {
            return Err(VcnError::BadConfig(format!(
                "{name}.b is {:?}, config wants (1, {fan_out})",
                b.shape()
            )));
        }
    }
    Ok(())
}

/// Random subsample down to `m_max` points, original order kept. Smaller
/// clouds pass through unchanged.
pub fn cap_points(cloud: &PointCloud, m_max: usize, seed: u64) -> PointCloud {
    if cloud.points.len() <= m_max {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, cloud.points.len(), m_max).into_vec();
    idx.sort_unstable();
    PointCloud::new(idx.into_iter().map(|i| cloud.points[i]).collect(), cloud.frame)
}

/// Dense inputs and pre-activation outputs of one MLP run, everything the
/// backward pass needs.
pub(crate) struct MlpTape<S: Scalar> {
    inputs: Vec<Tensor2<S>>,
    pre: Vec<Tensor2<S>>,
}

/// Runs `n_layers` dense layers named `{prefix}.{i}.w/.b`, with a leaky
/// ReLU between layers and none after the last.
fn mlp_forward<S: Scalar>(
    params: &ParamStore<S>,
    prefix: &str,
    n_layers: usize,
    x: Tensor2<S>,
    slope: f64,
) -> Result<(Tensor2<S>, MlpTape<S>), VcnError> {
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut cur = x;
    for i in 0..n_layers {
        let w = params.get(&format!("{prefix}.{i}.w"))?;
        let b = params.get(&format!("{prefix}.{i}.b"))?;
        let y = dense_forward(&cur, w, b)?;
        inputs.push(cur);
        cur = if i + 1 < n_layers { leaky_relu(&y, slope) } else { y.clone() };
        pre.push(y);
    }
    Ok((cur, MlpTape { inputs, pre }))
}

/// Mirror of [`mlp_forward`]: adds weight and bias gradients to the sink
/// and returns the gradient in the block input.
fn mlp_backward<S: Scalar>(
    params: &ParamStore<S>,
    prefix: &str,
    tape: &MlpTape<S>,
    grad_out: &Tensor2<S>,
    slope: f64,
    sink: &mut GradSink<S>,
) -> Result<Tensor2<S>, VcnError> {
    let n = tape.pre.len();
    let mut g = grad_out.clone();
    for i in (0..n).rev() {
        if i + 1 < n {
            g = leaky_relu_backward(&tape.pre[i], &g, slope);
        }
        let w = params.get(&format!("{prefix}.{i}.w"))?;
        let (gx, gw, gb) = dense_backward(&tape.inputs[i], w, &g)?;
        sink_add(sink, format!("{prefix}.{i}.w"), gw);
        sink_add(sink, format!("{prefix}.{i}.b"), gb);
        g = gx;
    }
    Ok(g)
}

/// Decoded 9D pose-head output.
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    /// Offset from the input centroid to the frustum-frame box centre.
    pub delta_t: Vec3,
    /// Frustum → canonical rotation recovered from the 6D parameters.
    pub rotation: Rotation3,
    /// Raw 6D rotation parameters as emitted by the head.
    pub rot6d: [f64; 6],
}

pub(crate) struct PoseTape<S: Scalar> {
    block1: MlpTape<S>,
    argmax: Vec<usize>,
    n_points: usize,
    block2: MlpTape<S>,
}

pub(crate) fn pose_head_traced<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    x: Tensor2<S>,
) -> Result<(Tensor2<S>, PoseTape<S>), VcnError> {
    let n_points = x.rows();
    let (h, block1) = mlp_forward(params, "pose1", cfg.pose_block1.len(), x, cfg.leaky_slope)?;
    let (g, argmax) = max_pool_points(&h)?;
    let (out, block2) = mlp_forward(params, "pose2", cfg.pose_block2.len(), g, cfg.leaky_slope)?;
    Ok((out, PoseTape { block1, argmax, n_points, block2 }))
}

pub(crate) fn pose_head_backward<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    tape: &PoseTape<S>,
    grad9: &Tensor2<S>,
    sink: &mut GradSink<S>,
) -> Result<(), VcnError> {
    let g = mlp_backward(params, "pose2", &tape.block2, grad9, cfg.leaky_slope, sink)?;
    let gh = max_pool_backward(&tape.argmax, tape.n_points, &g);
    mlp_backward(params, "pose1", &tape.block1, &gh, cfg.leaky_slope, sink)?;
    Ok(())
}

pub(crate) fn decode_pose<S: Scalar>(out9: &Tensor2<S>) -> Result<PoseEstimate, VcnError> {
    if out9.shape() != (1, 9) {
        return Err(NnError::ShapeMismatch {
            op: "decode_pose",
            detail: format!("want 1x9, got {:?}", out9.shape()),
        }
        .into());
    }
    let v: Vec<f64> = out9.row(0).iter().map(|&s| Scalar::to_f64(s)).collect();
    let rot6d = [v[3], v[4], v[5], v[6], v[7], v[8]];
    Ok(PoseEstimate {
        delta_t: Vec3::new(v[0], v[1], v[2]),
        rotation: rot6d_to_matrix(rot6d)?,
        rot6d,
    })
}

/// Runs the pose head on a mean-centred frustum cloud.
pub fn pose_head<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    cloud: &PointCloud,
) -> Result<PoseEstimate, VcnError> {
    let x = cloud_to_tensor::<S>(cloud)?;
    let (out, _) = pose_head_traced(params, cfg, x)?;
    decode_pose(&out)
}

pub(crate) struct CompletionTape<S: Scalar> {
    enc1: MlpTape<S>,
    pool1: Vec<usize>,
    enc2: MlpTape<S>,
    pool2: Vec<usize>,
    fin: MlpTape<S>,
    n_points: usize,
}

/// Everything one completion forward pass produced.
pub struct ForwardTrace<S: Scalar> {
    /// Per-point first-stage features, one row per input point.
    pub f: Tensor2<S>,
    /// First-stage global feature (max over points).
    pub g1: Tensor2<S>,
    /// Second-stage global feature that the point head decodes.
    pub g2: Tensor2<S>,
    /// Generated canonical surface points.
    pub s_cn: PointCloud,
    /// Pose the estimated-pose runner used; `None` for a plain completion.
    pub pose: Option<PoseEstimate>,
    tape: CompletionTape<S>,
}

/// Completion forward pass on a canonical cloud, keeping the tape.
pub fn complete_with_trace<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    cloud: &PointCloud,
) -> Result<ForwardTrace<S>, VcnError> {
    let x = cloud_to_tensor::<S>(cloud)?;
    let n_points = x.rows();
    let (f, enc1) = mlp_forward(params, "enc1", cfg.enc_stage1.len(), x, cfg.leaky_slope)?;
    let (g1, pool1) = max_pool_points(&f)?;
    let cat = concat_broadcast(&f, &g1)?;
    let (h2, enc2) = mlp_forward(params, "enc2", cfg.enc_stage2.len(), cat, cfg.leaky_slope)?;
    let (g2, pool2) = max_pool_points(&h2)?;
    let (out, fin) =
        mlp_forward(params, "final", cfg.final_hidden.len() + 1, g2.clone(), cfg.leaky_slope)?;
    if out.shape() != (1, 3 * cfg.n_out) {
        return Err(NnError::ShapeMismatch {
            op: "complete",
            detail: format!("head emitted {:?}, config wants 1x{}", out.shape(), 3 * cfg.n_out),
        }
        .into());
    }
    let row = out.row(0);
    let mut pts = Vec::with_capacity(cfg.n_out);
    for i in 0..cfg.n_out {
        pts.push(Vec3::new(
            row[3 * i].to_f64(),
            row[3 * i + 1].to_f64(),
            row[3 * i + 2].to_f64(),
        ));
    }
    Ok(ForwardTrace {
        f,
        g1,
        g2,
        s_cn: PointCloud::new(pts, Frame::Canonical),
        pose: None,
        tape: CompletionTape { enc1, pool1, enc2, pool2, fin, n_points },
    })
}

/// Completion forward pass, output only.
pub fn complete<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    cloud: &PointCloud,
) -> Result<PointCloud, VcnError> {
    Ok(complete_with_trace(params, cfg, cloud)?.s_cn)
}

/// Backpropagates a per-point gradient on the generated canonical points
/// through the whole encoder into the sink.
pub(crate) fn completion_backward<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    trace: &ForwardTrace<S>,
    grad_s: &[Vec3],
    sink: &mut GradSink<S>,
) -> Result<(), VcnError> {
    let n = trace.s_cn.points.len();
    if grad_s.len() != n {
        return Err(NnError::ShapeMismatch {
            op: "completion_backward",
            detail: format!("{} gradients for {n} generated points", grad_s.len()),
        }
        .into());
    }
    let mut vals = Vec::with_capacity(3 * n);
    for g in grad_s {
        vals.push(S::from_f64(g.x));
        vals.push(S::from_f64(g.y));
        vals.push(S::from_f64(g.z));
    }
    let grad_out = Tensor2::from_values(1, 3 * n, vals)?;
    let g = mlp_backward(params, "final", &trace.tape.fin, &grad_out, cfg.leaky_slope, sink)?;
    let gh2 = max_pool_backward(&trace.tape.pool2, trace.tape.n_points, &g);
    let gcat = mlp_backward(params, "enc2", &trace.tape.enc2, &gh2, cfg.leaky_slope, sink)?;
    let (gf_direct, gg1) = concat_broadcast_backward(&gcat, trace.f.cols(), trace.g1.cols())?;
    let gf_pool = max_pool_backward(&trace.tape.pool1, trace.tape.n_points, &gg1);
    let gf = tensor_add(&gf_direct, &gf_pool);
    mlp_backward(params, "enc1", &trace.tape.enc1, &gf, cfg.leaky_slope, sink)?;
    Ok(())
}

/// Completion with a labelled pose: canonicalize, complete, map back.
pub fn run_vcn_cn<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    partial: &PointCloud,
    gt_pose: &RigidPose,
) -> Result<PointCloud, VcnError> {
    let p_cn = canonicalize(partial, gt_pose);
    let trace = complete_with_trace(params, cfg, &p_cn)?;
    Ok(decanonicalize(&trace.s_cn, gt_pose, 0.0))
}

/// Result of an estimated-pose completion, all in the viewer frame.
#[derive(Clone, Debug)]
pub struct VcnVcOutput {
    /// Completed surface points.
    pub completed: PointCloud,
    /// Recovered viewer → canonical pose.
    pub pose: RigidPose,
    /// Oriented box fitted to the canonical completion.
    pub box3: Box3,
}

/// Heading of the box whose viewer → canonical rotation is `r`: the
/// direction the canonical +x axis points in the viewer plan view.
pub fn yaw_from_rotation(r: &Rotation3) -> f64 {
    let c0 = r.matrix().col(0);
    c0.y.atan2(c0.x)
}

/// Estimated-pose completion, also returning the forward trace with the
/// pose estimate filled in.
pub fn run_vcn_vc_traced<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    partial: &PointCloud,
    seed: u64,
) -> Result<(VcnVcOutput, ForwardTrace<S>), VcnError> {
    if partial.is_empty() {
        return Err(VcnError::EmptyInput);
    }
    let capped = cap_points(partial, cfg.m_max, seed);
    let theta = frustum_angle(&capped)?;
    let p_f = rotate_about_up(&capped, -theta)?;
    let (p_fm, mean) = mean_center(&p_f)?;
    let (out9, _) = pose_head_traced(params, cfg, cloud_to_tensor::<S>(&p_fm)?)?;
    let est = decode_pose(&out9)?;
    let pose_f = RigidPose::new(est.rotation, mean + est.delta_t);
    let p_cn = canonicalize(&p_f, &pose_f);
    let mut trace = complete_with_trace(params, cfg, &p_cn)?;
    trace.pose = Some(est);
    let cbox = box_from_canonical(&trace.s_cn)?;
    let completed = decanonicalize(&trace.s_cn, &pose_f, theta);
    // Fold the frustum rotation into the pose so callers get a single
    // viewer → canonical map.
    let pose_vc = RigidPose::new(
        Rotation3::about_up(-theta).then(&pose_f.rotation),
        Rotation3::about_up(theta).apply(pose_f.translation),
    );
    let center = pose_vc.apply_inverse(cbox.box3.center);
    let box3 = Box3::new(center, cbox.box3.dims, yaw_from_rotation(&pose_vc.rotation))?;
    Ok((VcnVcOutput { completed, pose: pose_vc, box3 }, trace))
}

/// Estimated-pose completion from a raw viewer-centred cloud: cap, find
/// the frustum, estimate the pose, complete, and map everything back.
pub fn run_vcn_vc<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &VcnConfig,
    partial: &PointCloud,
    seed: u64,
) -> Result<VcnVcOutput, VcnError> {
    Ok(run_vcn_vc_traced(params, cfg, partial, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vcn::testutil::{ang_diff, random_cloud, toy_sample};

    #[test]
    fn default_widths_count_the_expected_params() {
        let cfg = VcnConfig::default();
        assert_eq!(param_count(&cfg).unwrap(), 5_161_353);
        let store = init_params::<f32>(&cfg, 1).unwrap();
        assert_eq!(store.num_values(), 5_161_353);
        assert_eq!(store.len(), 24);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = VcnConfig::tiny();
        let a = init_params::<f64>(&cfg, 9).unwrap();
        let b = init_params::<f64>(&cfg, 9).unwrap();
        for (name, t) in a.iter() {
            assert_eq!(t.values(), b.get(name).unwrap().values(), "{name}");
        }
        let c = init_params::<f64>(&cfg, 10).unwrap();
        let w = a.get("enc1.0.w").unwrap();
        assert_ne!(w.values(), c.get("enc1.0.w").unwrap().values());
        let bound = (6.0 / 11.0f64).sqrt();
        assert!(w.values().iter().all(|v| v.abs() < bound));
        assert!(a.get("enc1.0.b").unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(param_count(&cfg).unwrap(), a.num_values());
    }

    #[test]
    fn completion_emits_the_configured_point_count() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f32>(&cfg, 3).unwrap();
        let cloud = random_cloud(17, Frame::Canonical, 5, 2.0);
        let trace = complete_with_trace(&store, &cfg, &cloud).unwrap();
        assert_eq!(trace.s_cn.points.len(), cfg.n_out);
        assert_eq!(trace.s_cn.frame, Frame::Canonical);
        assert!(trace.s_cn.is_finite());
        assert_eq!(trace.f.shape(), (17, 12));
        assert_eq!(trace.g1.shape(), (1, 12));
        assert_eq!(trace.g2.shape(), (1, 16));
        assert!(trace.pose.is_none());
    }

    #[test]
    fn completion_is_permutation_invariant() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f32>(&cfg, 11).unwrap();
        let cloud = random_cloud(23, Frame::Canonical, 6, 1.5);
        let mut rev = cloud.points.clone();
        rev.reverse();
        let a = complete(&store, &cfg, &cloud).unwrap();
        let b = complete(&store, &cfg, &PointCloud::new(rev, Frame::Canonical)).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.to_array(), q.to_array());
        }
    }

    #[test]
    fn capping_subsamples_deterministically() {
        let cloud = random_cloud(100, Frame::ViewerCentred, 2, 5.0);
        let a = cap_points(&cloud, 10, 40);
        let b = cap_points(&cloud, 10, 40);
        let c = cap_points(&cloud, 10, 41);
        assert_eq!(a.points.len(), 10);
        assert_eq!(a.frame, cloud.frame);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.to_array(), q.to_array());
        }
        assert!(a.points.iter().zip(&c.points).any(|(p, q)| p.to_array() != q.to_array()));
        // Kept points appear in their original order.
        let mut last = None;
        for p in &a.points {
            let idx =
                cloud.points.iter().position(|q| q.to_array() == p.to_array()).expect("subset");
            if let Some(prev) = last {
                assert!(idx > prev);
            }
            last = Some(idx);
        }
        assert_eq!(cap_points(&cloud, 100, 7).points.len(), 100);
    }

    #[test]
    fn pose_head_decodes_to_a_valid_rotation() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f32>(&cfg, 21).unwrap();
        let cloud = random_cloud(40, Frame::FrustumMean, 3, 1.0);
        let est = pose_head(&store, &cfg, &cloud).unwrap();
        assert!(est.delta_t.is_finite());
        assert!(est.rotation.angle_to(&Rotation3::IDENTITY).is_finite());
    }

    #[test]
    fn known_pose_completion_decanonicalizes_back() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f64>(&cfg, 13).unwrap();
        let sample = toy_sample();
        let out = run_vcn_cn(&store, &cfg, &sample.partial, &sample.gt_pose).unwrap();
        assert_eq!(out.frame, Frame::ViewerCentred);
        assert_eq!(out.points.len(), cfg.n_out);
        // Same thing assembled by hand.
        let cn = canonicalize(&sample.partial, &sample.gt_pose);
        let s_cn = complete(&store, &cfg, &cn).unwrap();
        let manual = decanonicalize(&s_cn, &sample.gt_pose, 0.0);
        for (p, q) in out.points.iter().zip(&manual.points) {
            assert_eq!(p.to_array(), q.to_array());
        }
    }

    #[test]
    fn estimated_pose_composition_matches_the_frustum_chain() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f64>(&cfg, 17).unwrap();
        let sample = toy_sample();
        let (out, trace) = run_vcn_vc_traced(&store, &cfg, &sample.partial, 99).unwrap();
        let est = trace.pose.clone().expect("estimated run fills the pose");
        let capped = cap_points(&sample.partial, cfg.m_max, 99);
        let theta = frustum_angle(&capped).unwrap();
        let p_f = rotate_about_up(&capped, -theta).unwrap();
        let (_, mean) = mean_center(&p_f).unwrap();
        let pose_f = RigidPose::new(est.rotation, mean + est.delta_t);
        for &p in capped.points.iter().take(20) {
            let composed = out.pose.apply(p);
            let chained = pose_f.apply(Rotation3::about_up(-theta).apply(p));
            assert!((composed - chained).norm() < 1e-9);
        }
        // Decanonicalizing with the composed pose and a zero frustum angle
        // lands on the same viewer cloud.
        let alt = decanonicalize(&trace.s_cn, &out.pose, 0.0);
        for (p, q) in out.completed.points.iter().zip(&alt.points) {
            assert!((*p - *q).norm() < 1e-9);
        }
        assert_eq!(out.completed.frame, Frame::ViewerCentred);
    }

    #[test]
    fn estimated_yaw_follows_an_azimuth_spin_of_the_input() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f64>(&cfg, 23).unwrap();
        let sample = toy_sample();
        let delta = 0.4;
        let spun = rotate_about_up(&sample.partial, delta).unwrap();
        let spun = PointCloud::new(spun.points, Frame::ViewerCentred);
        let a = run_vcn_vc(&store, &cfg, &sample.partial, 5).unwrap();
        let b = run_vcn_vc(&store, &cfg, &spun, 5).unwrap();
        assert!(ang_diff(b.box3.yaw, a.box3.yaw + delta) < 1e-6);
        assert!((b.box3.dims - a.box3.dims).norm() < 1e-9);
        let spun_center = Rotation3::about_up(delta).apply(a.box3.center);
        assert!((b.box3.center - spun_center).norm() < 1e-6);
        let spun_t = Rotation3::about_up(delta).apply(a.pose.translation);
        assert!((b.pose.translation - spun_t).norm() < 1e-6);
    }

    #[test]
    fn untrained_default_network_runs_end_to_end() {
        let cfg = VcnConfig::default();
        let store = init_params::<f32>(&cfg, 1).unwrap();
        let sample = toy_sample();
        let out = run_vcn_vc(&store, &cfg, &sample.partial, 8).unwrap();
        assert_eq!(out.completed.points.len(), cfg.n_out);
        assert!(out.completed.is_finite());
        assert!(out.box3.dims.x > 0.0 && out.box3.dims.y > 0.0 && out.box3.dims.z > 0.0);
    }

    #[test]
    fn store_validation_catches_mismatches() {
        let tiny = VcnConfig::tiny();
        let store = init_params::<f32>(&tiny, 2).unwrap();
        validate_store(&tiny, &store).unwrap();
        assert!(validate_store(&VcnConfig::default(), &store).is_err());
        let mut extra = init_params::<f32>(&tiny, 2).unwrap();
        extra.register("stray.w", Tensor2::zeros(1, 1)).unwrap();
        assert!(validate_store(&tiny, &extra).is_err());
    }

    #[test]
    fn yaw_reading_matches_the_box_convention() {
        // A viewer → canonical pose that undoes yaw ψ reads back ψ.
        for &psi in &[0.0, 0.3, -1.2, 2.9, -3.0] {
            let r = Rotation3::about_up(-psi);
            assert!((yaw_from_rotation(&r) - psi).abs() < 1e-12, "psi {psi}");
        }
        let sample = toy_sample();
        assert!((yaw_from_rotation(&sample.gt_pose.rotation) - sample.gt_box.yaw).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_rejected() {
        let cfg = VcnConfig::tiny();
        let store = init_params::<f32>(&cfg, 2).unwrap();
        let empty = PointCloud::new(Vec::new(), Frame::ViewerCentred);
        assert!(matches!(run_vcn_vc(&store, &cfg, &empty, 0), Err(VcnError::EmptyInput)));
        assert!(matches!(
            run_vcn_cn(&store, &cfg, &empty, &RigidPose::IDENTITY),
            Err(VcnError::EmptyInput)
        ));
    }
}
