use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::loss::{loss_terms, FeatureStats, LossTerms, LossWeights, Target};
use super::schedule::NoiseSchedule;
use super::DiffusionError;
use crate::fusion::{Fusion, FusionDims, FusionKind, SceneGeometry};
use crate::tensor::nn::{ParamBuilder, ParamStore};
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{TextEncoder, TextPrompt};

/// Shape-determining model settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub fusion: FusionKind,
    pub d_model: usize,
    pub d_text: usize,
    pub d_c: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub denoiser_layers: usize,
    pub k_neighbors: usize,
    pub global_subset: usize,
    pub num_joints: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fusion: FusionKind::ParallelCross,
            d_model: 64,
            d_text: 64,
            d_c: 128,
            heads: 4,
            text_layers: 2,
            denoiser_layers: 4,
            k_neighbors: 16,
            global_subset: 256,
            num_joints: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::Config(m.to_string()));
        if [self.d_model, self.d_text, self.d_c, self.heads, self.k_neighbors, self.global_subset]
            .contains(&0)
        {
            return bad("widths, heads, k_neighbors and global_subset must be positive");
        }
        if self.d_model % self.heads != 0 || self.d_text % self.heads != 0 {
            return bad("d_model and d_text must be divisible by heads");
        }
        if self.num_joints < 2 {
            return bad("num_joints must be at least 2");
        }
        Ok(())
    }

    pub fn d_pose(&self) -> usize {
        6 * self.num_joints + 3
    }
}

/// Text encoder, fusion and denoiser handles. Parameters live in a separate
/// [`ParamStore`] so sampling can share them read-only.
#[derive(Clone, Debug)]
pub struct MotionModel {
    pub config: ModelConfig,
    pub text: TextEncoder,
    pub fusion: Fusion,
    pub denoiser: Denoiser,
}

/// Everything a sample is conditioned on.
#[derive(Clone, Debug)]
pub struct Condition {
    pub geometry: SceneGeometry,
    pub prompt: TextPrompt,
}

impl Condition {
    pub fn new(features: &Tensor, prompt: TextPrompt, config: &ModelConfig) -> Result<Self, DiffusionError> {
        Ok(Self {
            geometry: SceneGeometry::new(features, config.k_neighbors, config.global_subset)?,
            prompt,
        })
    }
}

impl MotionModel {
    pub fn new(config: ModelConfig, vocab_len: usize, seed: u64) -> Result<(Self, ParamStore), DiffusionError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let c = &config;
        let text = TextEncoder::new(&mut pb, "text", vocab_len, c.d_text, c.text_layers, c.heads);
        let dims = FusionDims {
            d: c.d_model,
            d_text: c.d_text,
            d_c: c.d_c,
            heads: c.heads,
        };
        let fusion = Fusion::new(&mut pb, "fusion", c.fusion, dims);
        let denoiser = Denoiser::new(&mut pb, "denoiser", c.d_pose(), c.d_model, c.d_c, c.denoiser_layers, c.heads);
        Ok((
            Self {
                config,
                text,
                fusion,
                denoiser,
            },
            store,
        ))
    }

    /// `1 × d_c` condition on the tape.
    pub fn condition(&self, t: &mut Tape, cond: &Condition) -> Result<Var, DiffusionError> {
        let fl = self.text.forward(t, &cond.prompt);
        Ok(self.fusion.condition(t, &cond.geometry, fl)?)
    }

    pub fn condition_value(&self, store: &ParamStore, cond: &Condition) -> Result<Tensor, DiffusionError> {
        let mut t = Tape::inference(store);
        let z = self.condition(&mut t, cond)?;
        Ok(t.value(z).clone())
    }

    /// Loss for one item noised to step `step` with noise `eps`. With
    /// `drop_condition` the null condition replaces z_c.
    #[allow(clippy::too_many_arguments)]
    pub fn item_loss(
        &self,
        t: &mut Tape,
        cond: &Condition,
        target: &Target,
        schedule: &NoiseSchedule,
        step: usize,
        eps: &Tensor,
        drop_condition: bool,
        stats: &FeatureStats,
        feet: [usize; 2],
        weights: LossWeights,
    ) -> Result<LossTerms, DiffusionError> {
        let x_t = schedule.q_sample(&target.features, step, eps)?;
        let z = if drop_condition {
            None
        } else {
            Some(self.condition(t, cond)?)
        };
        let x = t.constant(x_t);
        let pred = self.denoiser.forward(t, x, step, z);
        Ok(loss_terms(t, pred, target, stats, feet, weights))
    }

    /// Predicted normalized clean motion for a fixed condition value.
    /// `guidance` other than 1 mixes in the unconditional prediction.
    pub fn predict(&self, store: &ParamStore, x_t: &Tensor, step: usize, z_c: &Tensor, guidance: f64) -> Tensor {
        let mut t = Tape::inference(store);
        let x = t.constant(x_t.clone());
        let z = t.constant(z_c.clone());
        let c = self.denoiser.forward(&mut t, x, step, Some(z));
        if guidance == 1.0 {
            return t.value(c).clone();
        }
        let u = self.denoiser.forward(&mut t, x, step, None);
        let d = t.sub(c, u);
        let d = t.scale(d, guidance);
        let y = t.add(u, d);
        t.value(y).clone()
    }

    /// Full reverse chain; returns raw (denormalized) features.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        &self,
        store: &ParamStore,
        schedule: &NoiseSchedule,
        stats: &FeatureStats,
        z_c: &Tensor,
        frames: usize,
        seed: u64,
        guidance: f64,
    ) -> Result<Tensor, DiffusionError> {
        let shape = (frames, self.config.d_pose());
        let x = run_chain(schedule, shape, seed, |x, step| Ok(self.predict(store, x, step, z_c, guidance)))?;
        Ok(stats.denormalize(&x))
    }
}

/// Unit Gaussian matrix.
pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

/// Ancestral sampling from `x_T ~ N(0, I)` with any clean-motion predictor.
pub fn run_chain(
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    seed: u64,
    mut predict: impl FnMut(&Tensor, usize) -> Result<Tensor, DiffusionError>,
) -> Result<Tensor, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&mut rng, shape.0, shape.1);
    for step in (1..=schedule.steps()).rev() {
        let x0 = predict(&x, step)?;
        let noise = (step > 1).then(|| gaussian(&mut rng, shape.0, shape.1));
        x = schedule.p_sample_step(&x, &x0, step, noise.as_ref())?;
    }
    Ok(x)
}
