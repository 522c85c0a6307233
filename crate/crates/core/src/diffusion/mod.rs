//! Noise schedule, clean-motion denoiser, training losses, the ancestral
//! sampler and the checkpoint format.

mod checkpoint;
mod denoiser;
mod loss;
mod model;
mod schedule;

pub use checkpoint::{Checkpoint, TensorEntry, MAGIC, VERSION};
pub use denoiser::Denoiser;
pub use loss::{loss_terms, FeatureStats, LossReport, LossTerms, LossWeights, Target, STD_FLOOR};
pub use model::{gaussian, run_chain, Condition, ModelConfig, MotionModel};
pub use schedule::{NoiseSchedule, ScheduleSpec};

use thiserror::Error;

use crate::fusion::FusionError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}
