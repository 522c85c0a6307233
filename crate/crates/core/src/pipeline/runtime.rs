//! Pieces shared by training, sampling and evaluation: seed derivation,
//! model (re)construction from checkpoints and per-record preparation.

use rayon::prelude::*;

use super::dataset::Record;
use super::{PipelineError, RunConfig};
use crate::diffusion::{Checkpoint, Condition, FeatureStats, MotionModel, NoiseSchedule, Target};
use crate::motion::{MotionClip, RootState};
use crate::scene::Scene;
use crate::tensor::nn::ParamStore;
use crate::tensor::optim::Adam;
use crate::tensor::Tensor;
use crate::text::{TextPrompt, Vocabulary};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(1)))
}

/// Seed streams, kept apart so e.g. the init seed never equals a step seed.
pub(crate) mod stream {
    pub const INIT: u64 = 1 << 40;
    pub const STEP: u64 = 2 << 40;
    pub const EVAL_SET: u64 = 3 << 40;
    pub const SAMPLE: u64 = 4 << 40;
    pub const R_SCORE: u64 = 5 << 40;
}

/// Seed of sample `i` drawn by `stmd sample` for a given `seed`.
pub fn sample_seed(seed: u64, i: u64) -> u64 {
    derive_seed(seed, stream::SAMPLE + i)
}

/// Rounds statistics to `f32` so a resumed run sees exactly what the
/// checkpoint stores.
pub(crate) fn f32_stats(s: FeatureStats) -> FeatureStats {
    let r = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
    FeatureStats {
        mean: r(s.mean),
        std: r(s.std),
    }
}

/// A model, its parameters and everything needed to run it.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub config: RunConfig,
    pub model: MotionModel,
    pub store: ParamStore,
    pub stats: FeatureStats,
    pub vocab: Vocabulary,
    pub schedule: NoiseSchedule,
    pub step: u64,
}

impl LoadedModel {
    /// Freshly initialized from the config seed.
    pub fn fresh(config: &RunConfig, vocab: Vocabulary, stats: FeatureStats) -> Result<Self, PipelineError> {
        config.validate()?;
        if stats.dim() != config.model.d_pose() {
            return Err(PipelineError::Config(format!(
                "feature width {} does not match model.num_joints {}",
                stats.dim(),
                config.model.num_joints
            )));
        }
        let (model, store) =
            MotionModel::new(config.model.clone(), vocab.len(), derive_seed(config.seed, stream::INIT))?;
        Ok(Self {
            config: config.clone(),
            model,
            store,
            stats,
            vocab,
            schedule: NoiseSchedule::from_spec(&config.schedule)?,
            step: 0,
        })
    }

    /// Rebuilds the model a checkpoint was written from. Refuses checkpoints
    /// whose shape hash or fusion kind disagree with `config`.
    pub fn from_checkpoint(config: &RunConfig, ckpt: &Checkpoint) -> Result<Self, PipelineError> {
        let hash = config.config_hash();
        if ckpt.config_hash != hash {
            return Err(PipelineError::Config(format!(
                "checkpoint config hash {} does not match config hash {hash}",
                ckpt.config_hash
            )));
        }
        if ckpt.fusion_kind != config.model.fusion {
            return Err(PipelineError::Config(format!(
                "checkpoint fusion {} does not match config fusion {}",
                ckpt.fusion_kind, config.model.fusion
            )));
        }
        let vocab = Vocabulary::from_tokens(ckpt.vocab.clone())?;
        let row = |name: &str| -> Result<Vec<f64>, PipelineError> {
            ckpt.get(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| PipelineError::Config(format!("checkpoint lacks {name}")))
        };
        let stats = FeatureStats {
            mean: row("stats.mean")?,
            std: row("stats.std")?,
        };
        let mut m = Self::fresh(config, vocab, stats)?;
        let ids: Vec<_> = m.store.ids().collect();
        for id in ids {
            let name = m.store.name(id).to_string();
            let t = ckpt
                .get(&name)
                .ok_or_else(|| PipelineError::Config(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != m.store.get(id).shape() {
                return Err(PipelineError::Config(format!("parameter {name} has shape {:?}", t.shape())));
            }
            *m.store.get_mut(id) = t.clone();
        }
        m.step = ckpt.step;
        Ok(m)
    }

    /// Parameters, statistics and (when given) optimizer moments.
    pub fn to_checkpoint(&self, adam: Option<&Adam>) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> =
            self.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        if let Some(a) = adam {
            let names: Vec<String> = self.store.iter().map(|(n, _)| n.to_string()).collect();
            for (n, m) in names.iter().zip(&a.m) {
                tensors.push((format!("adam.m.{n}"), m.clone()));
            }
            for (n, v) in names.iter().zip(&a.v) {
                tensors.push((format!("adam.v.{n}"), v.clone()));
            }
        }
        tensors.push(("stats.mean".into(), Tensor::row(self.stats.mean.clone())));
        tensors.push(("stats.std".into(), Tensor::row(self.stats.std.clone())));
        Checkpoint {
            fusion_kind: self.config.model.fusion,
            schedule: self.config.schedule,
            config_hash: self.config.config_hash(),
            step: self.step,
            vocab: self.vocab.tokens().to_vec(),
            tensors,
        }
    }

    /// Encoder input for a scene under the data settings.
    pub fn condition(&self, scene: &Scene, caption: &str) -> Result<Condition, PipelineError> {
        let d = &self.config.data;
        let cloud = scene.encoder_cloud(d.n_p, d.downsample, 0)?;
        let prompt = TextPrompt::new(&self.vocab, caption)?;
        Ok(Condition::new(&cloud.features(), prompt, &self.config.model)?)
    }

    pub fn condition_value(&self, cond: &Condition) -> Result<Tensor, PipelineError> {
        Ok(self.model.condition_value(&self.store, cond)?)
    }

    /// One sampled clip starting at the origin, facing +X.
    pub fn sample_clip(&self, z_c: &Tensor, seed: u64) -> Result<MotionClip, PipelineError> {
        let d = &self.config.data;
        let features = self.model.sample(
            &self.store,
            &self.schedule,
            &self.stats,
            z_c,
            d.frames,
            seed,
            self.config.eval.guidance,
        )?;
        let root = RootState {
            pos: [0.0, 0.0, 0.0],
            yaw: 0.0,
        };
        Ok(MotionClip::new(d.fps, features, root)?)
    }
}

/// A record ready for the loss: one condition per caption sharing the same
/// scene geometry, and the normalized target.
#[derive(Clone, Debug)]
pub struct PreparedItem {
    pub conditions: Vec<Condition>,
    pub target: Target,
}

pub fn prepare_items(m: &LoadedModel, records: &[&Record]) -> Result<Vec<PreparedItem>, PipelineError> {
    records
        .par_iter()
        .map(|r| {
            let first = m.condition(&r.scene, &r.meta.captions[0])?;
            let mut conditions = vec![first.clone()];
            for c in &r.meta.captions[1..] {
                conditions.push(Condition {
                    geometry: first.geometry.clone(),
                    prompt: TextPrompt::new(&m.vocab, c)?,
                });
            }
            let target = Target::new(&r.clip.features, r.clip.root_init, &m.stats)?;
            Ok(PreparedItem { conditions, target })
        })
        .collect()
}
