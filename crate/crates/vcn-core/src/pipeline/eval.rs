//! Test-split evaluation: run the completion pipeline per sample,
//! optionally inject synthetic outliers before post-processing, and
//! aggregate Chamfer, box overlap, and pose errors into per-sparsity
//! buckets.

use super::{derive_seed, PipelineError, PostprocMode, RunConfig, STREAM_EVAL, STREAM_OUTLIER};
use crate::dataset::{load_json, save_json, DatasetError, SplitFile};
use crate::geometry::{box_from_canonical, canonicalize, iou_3d, iou_bev, Box3, PointCloud, Vec3};
use crate::nncore::{load_checkpoint, ParamStore};
use crate::postproc::{knn_retain, postprocess};
use crate::synthgen::SampleRecord;
use crate::vcn::{loss_chamfer, run_vcn_vc, validate_store, yaw_from_rotation, VcnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Partial-cloud size classes reported separately; upper edges are
/// exclusive, the last class is open.
const BUCKET_EDGES: [usize; 3] = [31, 81, 201];
const BUCKET_LABELS: [&str; 4] = ["5-30", "31-80", "81-200", ">201"];

fn bucket_of(n_partial: usize) -> usize {
    BUCKET_EDGES.iter().position(|&e| n_partial < e).unwrap_or(BUCKET_EDGES.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Samples with fewer observed points than this are skipped.
    pub min_points: usize,
    pub postproc: PostprocMode,
    /// Fraction of the completed cloud re-added as far-away junk points
    /// before post-processing (robustness probe).
    pub outlier_fraction: f64,
    pub seed: u64,
}

/// Where predictions come from.
pub enum Predictor<'a> {
    Network(&'a ParamStore<f32>, &'a VcnConfig),
    /// Labels passed through unchanged; pins the metric identities
    /// (zero Chamfer and pose error, unit overlap).
    Oracle,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BucketStats {
    pub label: String,
    pub count: usize,
    pub mean_cd_x1000: f64,
    pub mean_iou_bev: f64,
    pub mean_iou_3d: f64,
    pub median_rot_err_deg: f64,
    pub mean_trans_err_m: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub mean_cd_x1000: f64,
    pub mean_iou_bev: f64,
    pub mean_iou_3d: f64,
    pub median_rot_err_deg: f64,
    pub mean_trans_err_m: f64,
    pub buckets: Vec<BucketStats>,
}

struct SampleMetrics {
    bucket: usize,
    cd_x1000: f64,
    iou_bev: f64,
    iou_3d: f64,
    rot_err_deg: f64,
    trans_err_m: f64,
}

fn median(sorted: &mut [f64]) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(label: &str, rows: &[&SampleMetrics]) -> BucketStats {
    let n = rows.len();
    if n == 0 {
        return BucketStats { label: label.to_string(), ..BucketStats::default() };
    }
    let mean = |f: fn(&SampleMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    let mut rot: Vec<f64> = rows.iter().map(|r| r.rot_err_deg).collect();
    BucketStats {
        label: label.to_string(),
        count: n,
        mean_cd_x1000: mean(|r| r.cd_x1000),
        mean_iou_bev: mean(|r| r.iou_bev),
        mean_iou_3d: mean(|r| r.iou_3d),
        median_rot_err_deg: median(&mut rot),
        mean_trans_err_m: mean(|r| r.trans_err_m),
    }
}

/// Junk points on a far shell around the box so the retention filter has
/// something unambiguous to remove.
fn inject_outliers(cloud: &mut PointCloud, around: &Box3, fraction: f64, seed: u64) {
    let n = (cloud.len() as f64 * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let dir = loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if let Some(u) = v.normalized(1e-3) {
                break u;
            }
        };
        let radius = rng.random_range(8.0..20.0);
        cloud.points.push(around.center + dir * radius);
    }
}

/// Runs the predictor over `records` and aggregates metrics. The Chamfer
/// distance compares the post-processed completion against the reference
/// surface in the frame the sensor saw, scaled by 1000.
pub fn evaluate_records(
    records: &[(String, SampleRecord)],
    predictor: &Predictor,
    postproc_cfg: &crate::postproc::PostprocConfig,
    opts: &EvalOptions,
) -> Result<MetricsReport, PipelineError> {
    let eligible: Vec<(usize, &(String, SampleRecord))> = records
        .iter()
        .enumerate()
        .filter(|(_, (_, rec))| rec.partial.len() >= opts.min_points)
        .collect();
    let skipped = records.len() - eligible.len();
    let per_sample = |i: usize, rec: &SampleRecord| -> Result<SampleMetrics, PipelineError> {
        let (mut completed, pose, oracle_box) = match predictor {
            Predictor::Network(params, vcfg) => {
                let out =
                    run_vcn_vc(*params, vcfg, &rec.partial, derive_seed(opts.seed, STREAM_EVAL, i as u64))?;
                (out.completed, out.pose, None)
            }
            Predictor::Oracle => (rec.complete.clone(), rec.gt_pose, Some(rec.gt_box)),
        };
        if opts.outlier_fraction > 0.0 {
            inject_outliers(
                &mut completed,
                &rec.gt_box,
                opts.outlier_fraction,
                derive_seed(opts.seed, STREAM_OUTLIER, i as u64),
            );
        }
        let processed = match opts.postproc {
            PostprocMode::None => completed,
            PostprocMode::Knn => knn_retain(&completed, &rec.partial, postproc_cfg.k_retain)?,
            PostprocMode::KnnDbscan => postprocess(&completed, &rec.partial, postproc_cfg)?.cloud,
        };
        // The reported box is refit from the post-processed surface, so
        // the overlap metrics score what a downstream consumer receives,
        // junk points and filtering included.
        let box3 = match oracle_box {
            Some(b) => b,
            None => {
                let cbox = box_from_canonical(&canonicalize(&processed, &pose))?;
                Box3::new(
                    pose.apply_inverse(cbox.box3.center),
                    cbox.box3.dims,
                    yaw_from_rotation(&pose.rotation),
                )?
            }
        };
        Ok(SampleMetrics {
            bucket: bucket_of(rec.partial.len()),
            cd_x1000: 1000.0 * loss_chamfer(&processed, &rec.complete)?,
            iou_bev: iou_bev(&box3, &rec.gt_box),
            iou_3d: iou_3d(&box3, &rec.gt_box),
            rot_err_deg: pose.rotation.angle_to(&rec.gt_pose.rotation).to_degrees(),
            trans_err_m: (pose.translation - rec.gt_pose.translation).norm(),
        })
    };
    let rows: Vec<SampleMetrics> = eligible
        .par_iter()
        .map(|&(i, (_, rec))| per_sample(i, rec))
        .collect::<Result<Vec<_>, _>>()?;

    let all: Vec<&SampleMetrics> = rows.iter().collect();
    let overall = summarize("all", &all);
    let buckets = BUCKET_LABELS
        .iter()
        .enumerate()
        .map(|(b, label)| {
            let members: Vec<&SampleMetrics> = rows.iter().filter(|r| r.bucket == b).collect();
            summarize(label, &members)
        })
        .collect();
    Ok(MetricsReport {
        n_evaluated: rows.len(),
        n_skipped: skipped,
        mean_cd_x1000: overall.mean_cd_x1000,
        mean_iou_bev: overall.mean_iou_bev,
        mean_iou_3d: overall.mean_iou_3d,
        median_rot_err_deg: overall.median_rot_err_deg,
        mean_trans_err_m: overall.mean_trans_err_m,
        buckets,
    })
}

/// Evaluates a checkpoint on the test split and writes
/// `metrics.json` into `cfg.out_dir`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport, PipelineError> {
    cfg.validate()?;
    let split_path = cfg.data_dir.join("split.json");
    let split: SplitFile = load_json(&split_path)?;
    split.validate()?;
    if split.test_samples.is_empty() {
        return Err(DatasetError::Format {
            path: split_path,
            msg: "split has no test samples".into(),
        }
        .into());
    }
    let records =
        super::train::load_named_samples(&cfg.data_dir, &split.test_samples, super::PoseMode::CentreRotation)?;
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    validate_store(&cfg.vcn, &ckpt.params)?;
    let opts = EvalOptions {
        min_points: cfg.eval.min_points,
        postproc: cfg.eval.postproc_mode,
        outlier_fraction: cfg.eval.outlier_fraction,
        seed: cfg.seed,
    };
    let report = evaluate_records(
        &records,
        &Predictor::Network(&ckpt.params, &cfg.vcn),
        &cfg.postproc,
        &opts,
    )?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| super::io_err(&cfg.out_dir, e))?;
    save_json(&cfg.out_dir.join("metrics.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::gen::cmd_gen;
    use crate::pipeline::gen::tests::tiny_run_config;
    use crate::pipeline::train::cmd_train;

    fn test_records(cfg: &RunConfig) -> Vec<(String, SampleRecord)> {
        let split: SplitFile = load_json(&cfg.data_dir.join("split.json")).unwrap();
        super::super::train::load_named_samples(
            &cfg.data_dir,
            &split.test_samples,
            crate::pipeline::PoseMode::CentreRotation,
        )
        .unwrap()
    }

    #[test]
    fn oracle_predictions_pin_the_metric_identities() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        cmd_gen(&cfg).unwrap();
        let records = test_records(&cfg);
        assert!(!records.is_empty());
        let opts = EvalOptions {
            min_points: 0,
            postproc: PostprocMode::None,
            outlier_fraction: 0.0,
            seed: 9,
        };
        let report =
            evaluate_records(&records, &Predictor::Oracle, &cfg.postproc, &opts).unwrap();
        assert_eq!(report.n_evaluated, records.len());
        assert_eq!(report.n_skipped, 0);
        assert!(report.mean_cd_x1000.abs() < 1e-9, "{}", report.mean_cd_x1000);
        assert!((report.mean_iou_bev - 1.0).abs() < 1e-9);
        assert!((report.mean_iou_3d - 1.0).abs() < 1e-9);
        assert!(report.median_rot_err_deg.abs() < 1e-9);
        assert!(report.mean_trans_err_m.abs() < 1e-9);
        let total: usize = report.buckets.iter().map(|b| b.count).sum();
        assert_eq!(total, report.n_evaluated);
    }

    #[test]
    fn outliers_hurt_unfiltered_oracle_metrics_and_knn_removes_them() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        cmd_gen(&cfg).unwrap();
        let records = test_records(&cfg);
        let base = EvalOptions {
            min_points: 0,
            postproc: PostprocMode::None,
            outlier_fraction: 0.10,
            seed: 9,
        };
        let raw = evaluate_records(&records, &Predictor::Oracle, &cfg.postproc, &base).unwrap();
        assert!(raw.mean_cd_x1000 > 1.0, "outliers should move the Chamfer: {}", raw.mean_cd_x1000);

        // Junk 8 m out never makes a neighbour list, so retention output
        // with outliers matches retention output without them exactly.
        let knn = EvalOptions { postproc: PostprocMode::Knn, ..base };
        let with_junk = evaluate_records(&records, &Predictor::Oracle, &cfg.postproc, &knn).unwrap();
        let clean_opts = EvalOptions { outlier_fraction: 0.0, ..knn };
        let clean =
            evaluate_records(&records, &Predictor::Oracle, &cfg.postproc, &clean_opts).unwrap();
        assert_eq!(with_junk.mean_cd_x1000, clean.mean_cd_x1000);
        assert_eq!(with_junk.mean_iou_3d, clean.mean_iou_3d);
        assert!(with_junk.mean_cd_x1000 < raw.mean_cd_x1000);
    }

    #[test]
    fn min_points_filter_skips_and_buckets_stay_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        cmd_gen(&cfg).unwrap();
        let records = test_records(&cfg);
        let opts = EvalOptions {
            min_points: 10_000,
            postproc: PostprocMode::None,
            outlier_fraction: 0.0,
            seed: 9,
        };
        let report =
            evaluate_records(&records, &Predictor::Oracle, &cfg.postproc, &opts).unwrap();
        assert_eq!(report.n_evaluated, 0);
        assert_eq!(report.n_skipped, records.len());
        assert!(report.buckets.iter().all(|b| b.count == 0));
    }

    #[test]
    fn cmd_eval_writes_a_report_for_a_trained_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path());
        cmd_gen(&cfg).unwrap();
        let out = cmd_train(&cfg, None).unwrap();
        cfg.eval.min_points = 0;
        let report = cmd_eval(&cfg, &out.checkpoint_path).unwrap();
        assert!(report.n_evaluated > 0);
        assert!(report.mean_cd_x1000.is_finite() && report.mean_cd_x1000 > 0.0);
        assert!((0.0..=1.0).contains(&report.mean_iou_bev));
        assert!((0.0..=1.0).contains(&report.mean_iou_3d));
        let reread: MetricsReport = load_json(&cfg.out_dir.join("metrics.json")).unwrap();
        assert_eq!(reread.n_evaluated, report.n_evaluated);
    }
}
