//! Scene completion: replace each masked object in a sensor point cloud
//! with its completed, post-processed surface. Points outside the masks
//! pass through untouched, in their original order, followed by the
//! completed objects in mask order.

use super::{PipelineError, RunConfig};
use crate::dataset::{load_json, read_ply, write_ply, MaskFile};
use crate::nncore::{load_checkpoint, ParamStore};
use crate::geometry::{Frame, PointCloud, Vec3};
use crate::postproc::{dbscan, postprocess};
use crate::vcn::{run_vcn_vc, validate_store, VcnError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectOutcome {
    pub name: String,
    pub n_input: usize,
    pub n_output: usize,
    pub completed: bool,
    /// Why the object passed through unmodified, when it did.
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletionReport {
    pub n_points_in: usize,
    pub n_points_out: usize,
    pub objects: Vec<ObjectOutcome>,
}

/// Largest DBSCAN cluster, ties to the lower label; `None` when
/// everything is noise.
fn dominant_cluster(points: &PointCloud, eps: f64, min_pts: usize) -> Option<Vec<usize>> {
    let labels = dbscan(points, eps, min_pts);
    let max_label = *labels.iter().max()?;
    let mut best: Option<(usize, i32)> = None;
    for label in 0..=max_label {
        let count = labels.iter().filter(|&&l| l == label).count();
        if best.map_or(true, |(c, _)| count > c) {
            best = Some((count, label));
        }
    }
    let (_, label) = best?;
    Some(
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect(),
    )
}

fn complete_object(
    params: &ParamStore<f32>,
    cfg: &RunConfig,
    points: PointCloud,
    seed: u64,
) -> Result<Result<PointCloud, String>, PipelineError> {
    if points.is_empty() {
        return Ok(Err("empty mask".into()));
    }
    let Some(members) = dominant_cluster(&points, cfg.postproc.db_eps, cfg.postproc.db_min_pts)
    else {
        return Ok(Err("no dominant cluster".into()));
    };
    let cluster = PointCloud::new(
        members.iter().map(|&i| points.points[i]).collect::<Vec<Vec3>>(),
        points.frame,
    );
    let out = match run_vcn_vc(params, &cfg.vcn, &cluster, seed) {
        Ok(out) => out,
        Err(VcnError::EmptyInput) => return Ok(Err("empty network input".into())),
        Err(e) => return Err(e.into()),
    };
    let processed = postprocess(&out.completed, &cluster, &cfg.postproc)?;
    Ok(Ok(processed.cloud))
}

/// Completes every masked object of `input` and writes the augmented
/// cloud to `out`. Objects whose points cannot support a completion are
/// passed through unmodified and flagged in the report.
pub fn cmd_complete(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    masks_path: &Path,
    out: &Path,
) -> Result<CompletionReport, PipelineError> {
    cfg.validate()?;
    let cloud = read_ply(input, Frame::ViewerCentred)?;
    let masks: MaskFile = load_json(masks_path)?;
    masks.validate(cloud.len(), masks_path)?;
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    validate_store(&cfg.vcn, &ckpt.params)?;

    let mut outcomes = Vec::with_capacity(masks.objects.len());
    let mut completions: Vec<PointCloud> = Vec::new();
    let mut replaced: BTreeSet<usize> = BTreeSet::new();
    for (k, obj) in masks.objects.iter().enumerate() {
        let points = PointCloud::new(
            obj.indices.iter().map(|&i| cloud.points[i]).collect::<Vec<Vec3>>(),
            cloud.frame,
        );
        let n_input = points.len();
        match complete_object(&ckpt.params, cfg, points, super::derive_seed(cfg.seed, super::STREAM_EVAL, k as u64))? {
            Ok(done) => {
                replaced.extend(obj.indices.iter().copied());
                outcomes.push(ObjectOutcome {
                    name: obj.name.clone(),
                    n_input,
                    n_output: done.len(),
                    completed: true,
                    reason: None,
                });
                completions.push(done);
            }
            Err(reason) => {
                outcomes.push(ObjectOutcome {
                    name: obj.name.clone(),
                    n_input,
                    n_output: n_input,
                    completed: false,
                    reason: Some(reason),
                });
            }
        }
    }

    let mut final_points: Vec<Vec3> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| !replaced.contains(i))
        .map(|(_, &p)| p)
        .collect();
    for done in &completions {
        final_points.extend_from_slice(&done.points);
    }
    let augmented = PointCloud::new(final_points, cloud.frame);
    write_ply(out, &augmented)?;
    Ok(CompletionReport {
        n_points_in: cloud.len(),
        n_points_out: augmented.len(),
        objects: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::save_json;
    use crate::dataset::ObjectMask;
    use crate::nncore::{save_checkpoint, Checkpoint};
    use crate::vcn::{init_params, testutil::toy_sample, VcnConfig};
    use std::fs;

    fn tiny_checkpoint(dir: &Path) -> (RunConfig, std::path::PathBuf) {
        let mut cfg = RunConfig::default();
        cfg.vcn = VcnConfig::tiny();
        cfg.out_dir = dir.join("out");
        let params = init_params::<f32>(&cfg.vcn, 5).unwrap();
        let path = dir.join("tiny.ckpt");
        save_checkpoint(&path, &Checkpoint::new(0, params, None)).unwrap();
        (cfg, path)
    }

    /// Background sprinkle far from the car so clustering cannot mix them.
    fn background(n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let fi = i as f64;
                Vec3::new(40.0 + (fi * 0.37).sin(), -8.0 + 0.25 * fi, -1.5 + (fi * 0.11).cos())
            })
            .collect()
    }

    #[test]
    fn splices_the_completion_and_keeps_background_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, ckpt) = tiny_checkpoint(dir.path());
        let sample = toy_sample();
        let n_car = sample.partial.len();
        let bg = background(120);

        let mut points = sample.partial.points.clone();
        points.extend_from_slice(&bg);
        let input = dir.path().join("scene.ply");
        write_ply(&input, &PointCloud::new(points, Frame::ViewerCentred)).unwrap();
        let masks = MaskFile {
            objects: vec![ObjectMask { name: "car_0".into(), indices: (0..n_car).collect() }],
        };
        let masks_path = dir.path().join("masks.json");
        save_json(&masks_path, &masks).unwrap();

        let out = dir.path().join("completed.ply");
        let report = cmd_complete(&cfg, &ckpt, &input, &masks_path, &out).unwrap();
        assert_eq!(report.n_points_in, n_car + bg.len());
        assert_eq!(report.objects.len(), 1);
        let obj = &report.objects[0];
        assert!(obj.completed, "{:?}", obj.reason);
        assert_eq!(obj.n_input, n_car);
        assert!(obj.n_output > 0);
        assert_eq!(report.n_points_out, bg.len() + obj.n_output);

        let augmented = read_ply(&out, Frame::ViewerCentred).unwrap();
        assert_eq!(augmented.len(), report.n_points_out);
        assert_eq!(&augmented.points[..bg.len()], &bg[..]);

        // Same inputs, same bytes.
        let out2 = dir.path().join("completed2.ply");
        cmd_complete(&cfg, &ckpt, &input, &masks_path, &out2).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
    }

    #[test]
    fn empty_mask_list_reproduces_the_input() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, ckpt) = tiny_checkpoint(dir.path());
        let input = dir.path().join("scene.ply");
        write_ply(&input, &PointCloud::new(background(40), Frame::ViewerCentred)).unwrap();
        let masks_path = dir.path().join("masks.json");
        save_json(&masks_path, &MaskFile::default()).unwrap();

        let out = dir.path().join("completed.ply");
        let report = cmd_complete(&cfg, &ckpt, &input, &masks_path, &out).unwrap();
        assert_eq!(report.n_points_in, report.n_points_out);
        assert!(report.objects.is_empty());
        assert_eq!(fs::read(&input).unwrap(), fs::read(&out).unwrap());
    }

    #[test]
    fn out_of_range_mask_errors_name_the_mask() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, ckpt) = tiny_checkpoint(dir.path());
        let input = dir.path().join("scene.ply");
        write_ply(&input, &PointCloud::new(background(40), Frame::ViewerCentred)).unwrap();
        let masks_path = dir.path().join("masks.json");
        let masks = MaskFile {
            objects: vec![ObjectMask { name: "car_7".into(), indices: vec![3, 40] }],
        };
        save_json(&masks_path, &masks).unwrap();

        let out = dir.path().join("completed.ply");
        let err = cmd_complete(&cfg, &ckpt, &input, &masks_path, &out).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("car_7") && msg.contains("40"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        assert!(!out.exists(), "no output on error");
    }

    #[test]
    fn sparse_objects_pass_through_unmodified() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, ckpt) = tiny_checkpoint(dir.path());
        // Four points dozens of meters apart: all DBSCAN noise.
        let sparse = vec![
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(20.0, 15.0, 0.0),
            Vec3::new(35.0, -12.0, 1.0),
            Vec3::new(55.0, 4.0, -1.0),
        ];
        let mut points = sparse.clone();
        points.extend_from_slice(&background(30));
        let input = dir.path().join("scene.ply");
        write_ply(&input, &PointCloud::new(points.clone(), Frame::ViewerCentred)).unwrap();
        let masks = MaskFile {
            objects: vec![ObjectMask { name: "ghost".into(), indices: vec![0, 1, 2, 3] }],
        };
        let masks_path = dir.path().join("masks.json");
        save_json(&masks_path, &masks).unwrap();

        let out = dir.path().join("completed.ply");
        let report = cmd_complete(&cfg, &ckpt, &input, &masks_path, &out).unwrap();
        let obj = &report.objects[0];
        assert!(!obj.completed);
        assert_eq!(obj.reason.as_deref(), Some("no dominant cluster"));
        assert_eq!(report.n_points_out, report.n_points_in);
        let augmented = read_ply(&out, Frame::ViewerCentred).unwrap();
        assert_eq!(augmented.points, points);
    }
}
