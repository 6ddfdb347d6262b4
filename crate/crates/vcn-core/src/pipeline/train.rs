//! Training loop: Adam over the full loss, a line-delimited per-step
//! loss log, and periodic checkpoints. Batch selection and point
//! capping are derived statelessly from (seed, step), so resuming from
//! a checkpoint reproduces the interrupted run's remaining steps bit
//! for bit.

use super::{derive_seed, io_err, PipelineError, PoseMode, RunConfig, STREAM_INIT, STREAM_TRAIN};
use crate::dataset::{load_json, load_sample, DatasetError, SplitFile};
use crate::geometry::Rotation3;
use crate::nncore::{load_checkpoint, save_checkpoint, AdamState, Checkpoint};
use crate::nncore::{Adam, Scalar};
use crate::synthgen::SampleRecord;
use crate::vcn::{init_params, loss_total, validate_store, VcnError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct LogRecord {
    pub step: u64,
    pub total: f64,
    pub complete: f64,
    pub knn: f64,
    pub dims: f64,
    pub pose_t: f64,
    pub pose_r: f64,
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Steps executed by this invocation (fewer than `steps` on resume).
    pub steps_run: u64,
    /// Batch-mean total loss at this invocation's first and last step.
    pub first_loss: f64,
    pub final_loss: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

pub(crate) fn load_named_samples(
    data_dir: &Path,
    names: &[String],
    pose_mode: PoseMode,
) -> Result<Vec<(String, SampleRecord)>, PipelineError> {
    names
        .iter()
        .map(|name| {
            let (mut rec, _mesh_id) = load_sample(&data_dir.join("samples").join(name))?;
            if pose_mode == PoseMode::Centre {
                // Ablated supervision: the labelled pose degrades to a pure
                // translation, so nothing teaches the net the car's heading.
                rec.gt_pose.rotation = Rotation3::about_up(0.0);
            }
            Ok((name.clone(), rec))
        })
        .collect()
}

/// Runs (or resumes) training per `cfg.train` on the train split under
/// `cfg.data_dir`, writing `train_log.jsonl` and `checkpoints/` into
/// `cfg.out_dir`.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let t = &cfg.train;
    let split_path = cfg.data_dir.join("split.json");
    let split: SplitFile = load_json(&split_path)?;
    split.validate()?;
    if split.train_samples.is_empty() {
        return Err(DatasetError::Format {
            path: split_path,
            msg: "split has no training samples".into(),
        }
        .into());
    }
    let samples = load_named_samples(&cfg.data_dir, &split.train_samples, t.pose_mode)?;

    let (mut params, mut adam, start_step) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            validate_store(&cfg.vcn, &ckpt.params)?;
            let mut adam = Adam::new(t.lr, t.beta1, t.beta2, t.eps);
            if let Some(state) = &ckpt.adam {
                state.apply_to(&mut adam);
            }
            (ckpt.params, adam, ckpt.step)
        }
        None => (
            init_params::<f32>(&cfg.vcn, derive_seed(cfg.seed, STREAM_INIT, 0))?,
            Adam::new(t.lr, t.beta1, t.beta2, t.eps),
            0,
        ),
    };
    if start_step >= t.steps {
        return Err(PipelineError::BadConfig(format!(
            "checkpoint is at step {start_step}, nothing left of the {} requested",
            t.steps
        )));
    }

    let ckpt_dir = cfg.out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
    let log_path = cfg.out_dir.join("train_log.jsonl");
    let mut log = if resume.is_some() {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        fs::File::create(&log_path)
    }
    .map_err(|e| io_err(&log_path, e))?;

    let n = samples.len();
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in start_step..t.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TRAIN, step));
        let idxs: Vec<usize> = if t.batch_size <= n {
            rand::seq::index::sample(&mut rng, n, t.batch_size).into_vec()
        } else {
            (0..t.batch_size).map(|_| rng.random_range(0..n)).collect()
        };

        params.zero_grads();
        let mut acc = [0.0; 6];
        let mut names = Vec::with_capacity(idxs.len());
        for &i in &idxs {
            let (name, rec) = &samples[i];
            let cap_seed = rng.random();
            let bd = loss_total(&mut params, &cfg.vcn, rec, cap_seed).map_err(|e| match e {
                VcnError::NonFinite => {
                    PipelineError::NumericFailure { step: step + 1, sample: name.clone() }
                }
                other => other.into(),
            })?;
            if !bd.total.is_finite() {
                return Err(PipelineError::NumericFailure { step: step + 1, sample: name.clone() });
            }
            for (a, v) in acc.iter_mut().zip([bd.complete, bd.knn, bd.dims, bd.pose_t, bd.pose_r, bd.total]) {
                *a += v;
            }
            names.push(name.clone());
        }
        let b = idxs.len() as f64;
        let scale = <f32 as Scalar>::from_f64(1.0 / b);
        for (_, tensor) in params.iter_mut() {
            for g in tensor.grad_mut() {
                *g = *g * scale;
            }
        }
        adam.step(&mut params)?;

        let line = LogRecord {
            step: step + 1,
            total: acc[5] / b,
            complete: acc[0] / b,
            knn: acc[1] / b,
            dims: acc[2] / b,
            pose_t: acc[3] / b,
            pose_r: acc[4] / b,
            samples: names,
        };
        let text = serde_json::to_string(&line)
            .map_err(|e| PipelineError::BadConfig(format!("log serialization: {e}")))?;
        writeln!(log, "{text}").map_err(|e| io_err(&log_path, e))?;

        if step == start_step {
            first_loss = line.total;
        }
        final_loss = line.total;
        if (step + 1) % t.checkpoint_every == 0 || step + 1 == t.steps {
            let ckpt =
                Checkpoint::new(step + 1, params.clone(), Some(AdamState::capture(&adam)));
            save_checkpoint(&ckpt_dir.join(format!("step_{:06}.ckpt", step + 1)), &ckpt)?;
        }
    }

    Ok(TrainOutcome {
        steps_run: t.steps - start_step,
        first_loss,
        final_loss,
        checkpoint_path: ckpt_dir.join(format!("step_{:06}.ckpt", t.steps)),
        log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor2;
    use crate::pipeline::gen::tests::tiny_run_config;
    use crate::pipeline::gen::cmd_gen;

    fn read_log(path: &Path) -> Vec<LogRecord> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn training_logs_checkpoints_and_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        cmd_gen(&cfg).unwrap();

        let out = cmd_train(&cfg, None).unwrap();
        assert_eq!(out.steps_run, 6);
        assert!(out.first_loss.is_finite() && out.final_loss.is_finite());
        let full = read_log(&out.log_path);
        assert_eq!(full.len(), 6);
        for (i, rec) in full.iter().enumerate() {
            assert_eq!(rec.step, i as u64 + 1);
            assert_eq!(rec.samples.len(), cfg.train.batch_size);
            let parts = rec.complete + rec.knn + rec.dims + rec.pose_t + rec.pose_r;
            assert!((rec.total - parts).abs() <= 1e-9 * rec.total.abs().max(1.0));
        }
        let mid = cfg.out_dir.join("checkpoints").join("step_000003.ckpt");
        assert!(mid.is_file());
        assert!(out.checkpoint_path.is_file());

        // Resume from the midpoint into a fresh out dir: the log must be
        // the uninterrupted run's tail, the final checkpoint its twin.
        let mut cfg2 = cfg.clone();
        cfg2.out_dir = dir.path().join("out_resume");
        let out2 = cmd_train(&cfg2, Some(&mid)).unwrap();
        assert_eq!(out2.steps_run, 3);
        let full_text = fs::read_to_string(&out.log_path).unwrap();
        let tail_text = fs::read_to_string(&out2.log_path).unwrap();
        let want: Vec<&str> = full_text.lines().skip(3).collect();
        let got: Vec<&str> = tail_text.lines().collect();
        assert_eq!(got, want);
        assert_eq!(
            fs::read(&out.checkpoint_path).unwrap(),
            fs::read(&out2.checkpoint_path).unwrap(),
        );
    }

    #[test]
    fn non_finite_forward_aborts_with_the_sample_id() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        cmd_gen(&cfg).unwrap();
        let out = cmd_train(&cfg, None).unwrap();

        // Poison the weights; every sample now produces a NaN forward.
        let mut ckpt = load_checkpoint::<f32>(&out.checkpoint_path).unwrap();
        for name in ckpt.params.names() {
            let tensor = ckpt.params.get(&name).unwrap();
            let (r, c) = tensor.shape();
            let vals = vec![f32::NAN; r * c];
            *ckpt.params.get_mut(&name).unwrap() = Tensor2::from_values(r, c, vals).unwrap();
        }
        let bad = dir.path().join("poisoned.ckpt");
        ckpt.step = 0;
        save_checkpoint(&bad, &ckpt).unwrap();

        let mut cfg2 = cfg.clone();
        cfg2.out_dir = dir.path().join("out_bad");
        let err = cmd_train(&cfg2, Some(&bad)).unwrap_err();
        match &err {
            PipelineError::NumericFailure { step, sample } => {
                assert_eq!(*step, 1);
                assert!(sample.starts_with("sample_"), "{sample}");
            }
            other => panic!("wrong error: {other}"),
        }
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("non-finite loss at step 1"));
    }
}
