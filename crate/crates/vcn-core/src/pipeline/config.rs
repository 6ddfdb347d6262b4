//! The run configuration file: one JSON document covering generation,
//! network, training, post-processing, and evaluation. Every field has
//! a default, so a partial config (or `{}`) is valid.

use super::PipelineError;
use crate::postproc::PostprocConfig;
use crate::synthgen::{ManifestGenConfig, RayGridConfig};
use crate::vcn::VcnConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Simulated-scan settings applied to dense partials at generation
/// time. Pattern parameters are drawn per sample from the choice sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub enabled: bool,
    pub n_bins_choices: Vec<usize>,
    pub ring_stride_choices: Vec<usize>,
    pub point_stride_choices: Vec<usize>,
    /// Vertical field of view in degrees.
    pub vfov_deg: (f64, f64),
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            enabled: true,
            n_bins_choices: vec![32, 64, 128, 256],
            ring_stride_choices: vec![1, 2, 4],
            point_stride_choices: vec![1, 2, 4],
            vfov_deg: (-25.0, 5.0),
        }
    }
}

impl LidarConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        let sets = [
            ("n_bins_choices", &self.n_bins_choices),
            ("ring_stride_choices", &self.ring_stride_choices),
            ("point_stride_choices", &self.point_stride_choices),
        ];
        for (name, set) in sets {
            if set.is_empty() {
                return Err(PipelineError::BadConfig(format!("{name} must not be empty")));
            }
            if set.iter().any(|&v| v < 1) {
                return Err(PipelineError::BadConfig(format!("{name} entries must be >= 1")));
            }
        }
        if !(self.vfov_deg.0 < self.vfov_deg.1) {
            return Err(PipelineError::BadConfig(format!(
                "lidar vfov must satisfy min < max, got {:?}",
                self.vfov_deg
            )));
        }
        Ok(())
    }
}

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Procedural car library size, used when no mesh directory is given.
    pub n_meshes: usize,
    pub n_scenes: usize,
    /// Views composing each canonical complete surface (6..=26).
    pub complete_views: usize,
    /// Point count of each complete surface after farthest-point sampling.
    pub complete_points: usize,
    /// Fraction of meshes held out for the test split.
    pub test_mesh_fraction: f64,
    /// Partials with fewer points than this are dropped at generation.
    pub min_partial_points: usize,
    pub manifest: ManifestGenConfig,
    pub grid: RayGridConfig,
    pub lidar: LidarConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_meshes: 50,
            n_scenes: 120,
            complete_views: 26,
            complete_points: 16384,
            test_mesh_fraction: 0.2,
            min_partial_points: 5,
            manifest: ManifestGenConfig::default(),
            grid: RayGridConfig::default(),
            lidar: LidarConfig::default(),
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.n_meshes < 1 || self.n_scenes < 1 {
            return Err(PipelineError::BadConfig(
                "n_meshes and n_scenes must be at least 1".into(),
            ));
        }
        if !(6..=26).contains(&self.complete_views) {
            return Err(PipelineError::BadConfig(format!(
                "complete_views must be within 6..=26, got {}",
                self.complete_views
            )));
        }
        if self.complete_points < 1 {
            return Err(PipelineError::BadConfig("complete_points must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.test_mesh_fraction) {
            return Err(PipelineError::BadConfig(format!(
                "test_mesh_fraction must be in [0, 1), got {}",
                self.test_mesh_fraction
            )));
        }
        if self.min_partial_points < 1 {
            return Err(PipelineError::BadConfig("min_partial_points must be >= 1".into()));
        }
        self.grid.validate().map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        self.lidar.validate()
    }
}

/// Which pose quantities the trainer supervises. `Centre` ablates
/// rotation: samples train as if every car faced the viewer axis, so
/// the recovered pose carries translation only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    Centre,
    CentreRotation,
}

/// Optimizer and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub pose_mode: PoseMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            steps: 2000,
            checkpoint_every: 500,
            pose_mode: PoseMode::CentreRotation,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PipelineError::BadConfig(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(PipelineError::BadConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(PipelineError::BadConfig("eps must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(PipelineError::BadConfig("batch_size must be at least 1".into()));
        }
        if self.steps < 1 {
            return Err(PipelineError::BadConfig("steps must be at least 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(PipelineError::BadConfig("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Post-processing applied to completions during evaluation and scene
/// completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostprocMode {
    None,
    Knn,
    KnnDbscan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Partials below this point count are excluded from the report.
    pub min_points: usize,
    pub postproc_mode: PostprocMode,
    /// Fraction of completion points replaced by far outliers before
    /// post-processing, for robustness studies. Zero disables.
    pub outlier_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_points: 30,
            postproc_mode: PostprocMode::KnnDbscan,
            outlier_fraction: 0.0,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(PipelineError::BadConfig(format!(
                "outlier_fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        Ok(())
    }
}

/// Everything one run needs. Paths are interpreted relative to the
/// process working directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory of `*.mesh` car models; a procedural library is
    /// synthesized when absent.
    pub mesh_dir: Option<PathBuf>,
    /// Dataset root written by `gen`, read by `train`/`eval`.
    pub data_dir: PathBuf,
    /// Checkpoints, logs, and reports.
    pub out_dir: PathBuf,
    pub vcn: VcnConfig,
    pub postproc: PostprocConfig,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mesh_dir: None,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            vcn: VcnConfig::default(),
            postproc: PostprocConfig::default(),
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.vcn.validate().map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        self.postproc.validate().map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        self.gen.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Parses and validates a JSON config document.
    pub fn from_json(text: &str) -> Result<RunConfig, PipelineError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| PipelineError::BadConfig(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn empty_document_parses_to_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_document_overrides_only_named_fields() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 7, "train": {"batch_size": 2}, "eval": {"min_points": 50}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.steps, TrainConfig::default().steps);
        assert_eq!(cfg.eval.min_points, 50);
        assert_eq!(cfg.vcn, VcnConfig::default());
    }

    #[test]
    fn validation_names_the_bad_field() {
        let cases = [
            (r#"{"train": {"batch_size": 0}}"#, "batch_size"),
            (r#"{"train": {"lr": 0.0}}"#, "lr"),
            (r#"{"gen": {"complete_views": 3}}"#, "complete_views"),
            (r#"{"gen": {"test_mesh_fraction": 1.0}}"#, "test_mesh_fraction"),
            (r#"{"gen": {"lidar": {"n_bins_choices": []}}}"#, "n_bins_choices"),
            (r#"{"eval": {"outlier_fraction": 1.5}}"#, "outlier_fraction"),
            (r#"{"vcn": {"n_out": 0}}"#, "n_out"),
        ];
        for (doc, needle) in cases {
            let err = RunConfig::from_json(doc).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(needle), "wanted '{needle}' in: {msg}");
            assert_eq!(err.exit_code(), 1);
        }
    }

    #[test]
    fn config_survives_a_write_read_cycle() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.train.pose_mode = PoseMode::Centre;
        cfg.eval.postproc_mode = PostprocMode::None;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
