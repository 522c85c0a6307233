//! Corpus generation, training, sampling, evaluation, the fusion ablation
//! harness and the importer behind the `stmd` command.

mod ablate;
mod config;
mod dataset;
mod evaluate;
mod import;
mod runtime;
pub mod scripts;
mod train;

pub use ablate::{ablate, AblationRow};
pub use config::{DataConfig, EvalConfig, RunConfig, TrainConfig};
pub use dataset::{gen_dataset, Dataset, Manifest, ManifestRecord, Record, Split, MANIFEST};
pub use evaluate::{evaluate, evaluate_clips, render_table, sample_cmd, Evaluation, Judge};
pub use import::{import_laserhuman, ImportOutcome, RawMotion};
pub use runtime::{derive_seed, prepare_items, sample_seed, LoadedModel, PreparedItem};
pub use train::{train, TrainOutcome, LOSS_LOG};

use std::path::Path;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::fusion::FusionError;
use crate::metrics::MetricsError;
use crate::motion::MotionError;
use crate::scene::SceneError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// True for bad inputs (exit code 1) as opposed to failures while running
    /// (exit code 2).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_) | PipelineError::Manifest(_) | PipelineError::Text(_)
        ) || matches!(self, PipelineError::Diffusion(DiffusionError::Config(_) | DiffusionError::Checkpoint(_)))
            || matches!(self, PipelineError::Fusion(FusionError::UnknownKind(_)))
    }
}
