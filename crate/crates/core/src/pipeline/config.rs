use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::diffusion::{LossWeights, ModelConfig, ScheduleSpec};
use crate::metrics::MatchingConfig;
use crate::motion::ContactThresholds;
use crate::scene::Downsample;
use crate::tensor::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Records written by `gen-data`.
    pub size: usize,
    pub frames: usize,
    pub fps: u32,
    /// Encoder input points per scene.
    pub n_p: usize,
    pub downsample: Downsample,
    /// Horizontal crop radius around the motion start.
    pub crop_radius: f64,
    pub contact_velocity: f64,
    pub contact_height: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            size: 256,
            frames: 40,
            fps: 10,
            n_p: 2048,
            downsample: Downsample::Fps,
            crop_radius: 4.0,
            contact_velocity: 0.05,
            contact_height: 0.08,
        }
    }
}

impl DataConfig {
    pub fn thresholds(&self) -> ContactThresholds {
        ContactThresholds {
            velocity: self.contact_velocity,
            height: self.contact_height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Probability of training an item with the null condition.
    pub cond_dropout: f64,
    /// Size of the fixed held-out set the loss curve is measured on.
    pub eval_items: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 1e-4,
            clip_norm: 1.0,
            log_every: 10,
            checkpoint_every: 500,
            cond_dropout: 0.0,
            eval_items: 64,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Samples per test condition.
    pub k: usize,
    pub tau_col: f64,
    pub tau_con: f64,
    pub r_pool: usize,
    /// Classifier-free guidance scale; 1 is plain conditional sampling.
    pub guidance: f64,
    pub matching: MatchingConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            tau_col: crate::metrics::TAU,
            tau_con: crate::metrics::TAU,
            r_pool: crate::metrics::DEFAULT_POOL,
            guidance: 1.0,
            matching: MatchingConfig::default(),
        }
    }
}

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: ScheduleSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Serialize)]
struct ShapeKeys<'a> {
    model: &'a ModelConfig,
    schedule: &'a ScheduleSpec,
    frames: usize,
    n_p: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let c: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate()?;
        crate::diffusion::NoiseSchedule::from_spec(&self.schedule)?;
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.data.frames < 2 || self.data.fps == 0 || self.data.n_p == 0 {
            return bad("data.frames must be at least 2, data.fps and data.n_p positive");
        }
        if !(self.data.crop_radius > 0.0) {
            return bad("data.crop_radius must be positive");
        }
        if self.train.batch == 0 || !(self.train.lr > 0.0) {
            return bad("train.batch and train.lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.train.cond_dropout) {
            return bad("train.cond_dropout must lie in [0, 1]");
        }
        if self.eval.r_pool < 2 {
            return bad("eval.r_pool must be at least 2");
        }
        Ok(())
    }

    /// Hash of the keys that fix parameter shapes and the noise schedule.
    /// Checkpoints and reports carry it; loads with a different hash fail.
    pub fn config_hash(&self) -> String {
        let keys = ShapeKeys {
            model: &self.model,
            schedule: &self.schedule,
            frames: self.data.frames,
            n_p: self.data.n_p,
        };
        let json = serde_json::to_string(&keys).expect("keys serialize");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
