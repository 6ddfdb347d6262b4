//! The four pipeline commands behind the CLI: dataset generation,
//! training, evaluation, and scene completion. Everything here is a
//! library function taking a [`RunConfig`], so tests and the binary
//! drive identical code paths.

mod complete;
mod config;
mod eval;
mod gen;
mod train;

pub use complete::{cmd_complete, CompletionReport, ObjectOutcome};
pub use config::{EvalConfig, GenConfig, LidarConfig, PoseMode, PostprocMode, RunConfig, TrainConfig};
pub use eval::{cmd_eval, evaluate_records, BucketStats, EvalOptions, MetricsReport, Predictor};
pub use gen::{cmd_gen, GenSummary};
pub use train::{cmd_train, TrainOutcome};

use crate::dataset::DatasetError;
use crate::geometry::GeometryError;
use crate::lidarsim::LidarError;
use crate::nncore::NnError;
use crate::postproc::PostprocError;
use crate::synthgen::SynthError;
use crate::vcn::VcnError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Lidar(#[from] LidarError),
    #[error(transparent)]
    Vcn(#[from] VcnError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step} on sample '{sample}'")]
    NumericFailure { step: u64, sample: String },
}

impl PipelineError {
    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::BadConfig(_) => 1,
            PipelineError::NumericFailure { .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.to_path_buf(), source }
}

// Independent seed streams derived from the master seed.
pub(crate) const STREAM_MESH: u64 = 1;
pub(crate) const STREAM_SPLIT: u64 = 2;
pub(crate) const STREAM_SCENE: u64 = 3;
pub(crate) const STREAM_LIDAR: u64 = 4;
pub(crate) const STREAM_INIT: u64 = 5;
pub(crate) const STREAM_TRAIN: u64 = 6;
pub(crate) const STREAM_OUTLIER: u64 = 7;
pub(crate) const STREAM_EVAL: u64 = 8;

/// Stateless per-(stream, index) seed derivation, so dropped samples or
/// restarted runs never shift later draws.
pub(crate) fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut x = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
