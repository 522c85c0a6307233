use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::tensor::nn::{sinusoid_table, EncoderLayer, Linear, ParamBuilder, ParamId, ParamStore};
use crate::tensor::optim::{Adam, AdamConfig};
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{TextEncoder, TextPrompt};

pub const EMBED_DIM: usize = 32;
const NORM_EPS: f64 = 1e-12;
/// Upper bound on the learned logit scale, as in CLIP.
const MAX_LOG_SCALE: f64 = 4.605_170_185_988_091;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub d: usize,
    pub heads: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 2,
            steps: 600,
            batch: 16,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Motion and caption encoders mapping into a shared unit sphere. The
/// motion branch also supplies FID features.
#[derive(Clone, Debug)]
pub struct MatchingModel {
    pub motion_in: Linear,
    pub motion_layer: EncoderLayer,
    pub motion_out: Linear,
    pub text: TextEncoder,
    pub text_out: Linear,
    pub log_scale: ParamId,
    pub d: usize,
}

impl MatchingModel {
    pub fn new(pb: &mut ParamBuilder, d_pose: usize, vocab: usize, d: usize, heads: usize) -> Self {
        let mut pb = pb.sub("matching");
        Self {
            motion_in: Linear::new(&mut pb, "motion_in", d_pose, d),
            motion_layer: EncoderLayer::new(&mut pb, "motion_layer", d, 2 * d, heads),
            motion_out: Linear::new(&mut pb, "motion_out", d, EMBED_DIM),
            text: TextEncoder::new(&mut pb, "text", vocab, d, 1, heads),
            text_out: Linear::new(&mut pb, "text_out", d, EMBED_DIM),
            log_scale: pb.constant("log_scale", &[1, 1], 0.0),
            d,
        }
    }

    /// `1 × 32` unit embedding of normalized motion features.
    pub fn embed_motion_var(&self, t: &mut Tape, features: &Tensor) -> Var {
        let x = t.constant(features.clone());
        let h = self.motion_in.forward(t, x);
        let pos = t.constant(sinusoid_table(features.rows(), self.d));
        let h = t.add(h, pos);
        let h = self.motion_layer.forward(t, h);
        let p = t.mean_rows(h);
        let e = self.motion_out.forward(t, p);
        t.normalize_rows(e, NORM_EPS)
    }

    pub fn embed_text_var(&self, t: &mut Tape, prompt: &TextPrompt) -> Var {
        let h = self.text.forward(t, prompt);
        let p = t.mean_rows(h);
        let e = self.text_out.forward(t, p);
        t.normalize_rows(e, NORM_EPS)
    }

    pub fn embed_motion(&self, store: &ParamStore, features: &Tensor) -> Vec<f64> {
        let mut t = Tape::inference(store);
        let e = self.embed_motion_var(&mut t, features);
        t.value(e).data().to_vec()
    }

    pub fn embed_text(&self, store: &ParamStore, prompt: &TextPrompt) -> Vec<f64> {
        let mut t = Tape::inference(store);
        let e = self.embed_text_var(&mut t, prompt);
        t.value(e).data().to_vec()
    }

    /// Symmetric in-batch contrastive loss.
    pub fn batch_loss(&self, t: &mut Tape, batch: &[(&Tensor, &TextPrompt)]) -> Var {
        let b = batch.len();
        let m: Vec<Var> = batch.iter().map(|(x, _)| self.embed_motion_var(t, x)).collect();
        let c: Vec<Var> = batch.iter().map(|(_, p)| self.embed_text_var(t, p)).collect();
        let m = t.concat_rows(&m);
        let c = t.concat_rows(&c);
        let sim = t.matmul_nt(m, c);
        let ls = t.param(self.log_scale);
        let scale = t.exp(ls);
        let ones = t.constant(Tensor::matrix(b, 1, vec![1.0; b]));
        let scale_col = t.matmul(ones, scale);
        let logits = t.mul_col(sim, scale_col);
        let eye = t.constant(Tensor::matrix(
            b,
            b,
            (0..b * b).map(|i| if i / b == i % b { 1.0 } else { 0.0 }).collect(),
        ));
        let rows = t.log_softmax(logits);
        let lt = t.transpose(logits);
        let cols = t.log_softmax(lt);
        let a = t.mul(rows, eye);
        let bb = t.mul(cols, eye);
        let s = t.add(a, bb);
        let s = t.sum(s);
        t.scale(s, -0.5 / b as f64)
    }
}

/// Trains a matching model on `(normalized features, caption)` pairs.
/// Batches never repeat a caption, so every in-batch negative is a real
/// mismatch.
pub fn train_matching_model(
    pairs: &[(Tensor, TextPrompt)],
    vocab: usize,
    config: &MatchingConfig,
) -> Result<(MatchingModel, ParamStore), MetricsError> {
    if pairs.len() < 64 {
        return Err(MetricsError::TooFew {
            need: 64,
            got: pairs.len(),
        });
    }
    let mut distinct: Vec<&str> = pairs.iter().map(|(_, p)| p.raw.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MetricsError::Degenerate("all captions are identical".into()));
    }
    let d_pose = pairs[0].0.cols();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = MatchingModel::new(&mut ParamBuilder::new(&mut store, &mut rng), d_pose, vocab, config.d, config.heads);
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        },
        &store,
    );
    let batch = config.batch.min(distinct.len()).max(2);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..config.steps {
        order.shuffle(&mut rng);
        let mut picked: Vec<usize> = Vec::with_capacity(batch);
        for &i in &order {
            if picked.len() == batch {
                break;
            }
            if picked.iter().all(|&j| pairs[j].1.raw != pairs[i].1.raw) {
                picked.push(i);
            }
        }
        let items: Vec<(&Tensor, &TextPrompt)> = picked.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();
        let mut t = Tape::with_params(&store);
        let loss = model.batch_loss(&mut t, &items);
        let grads = t.backward(loss).map_err(|e| MetricsError::Degenerate(e.to_string()))?;
        adam.update(&mut store, grads.params());
        let ls = store.get_mut(model.log_scale);
        ls.data_mut()[0] = ls.data()[0].min(MAX_LOG_SCALE);
    }
    Ok((model, store))
}

/// Top-1 caption retrieval inside consecutive batches of `batch` pairs.
pub fn in_batch_accuracy(model: &MatchingModel, store: &ParamStore, pairs: &[(Tensor, TextPrompt)], batch: usize) -> f64 {
    let m: Vec<Vec<f64>> = pairs.iter().map(|(x, _)| model.embed_motion(store, x)).collect();
    let c: Vec<Vec<f64>> = pairs.iter().map(|(_, p)| model.embed_text(store, p)).collect();
    let mut hits = 0;
    let mut total = 0;
    for chunk in (0..pairs.len()).collect::<Vec<_>>().chunks(batch) {
        if chunk.len() < batch {
            break;
        }
        for &i in chunk {
            let sim = |j: usize| m[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum::<f64>();
            let own = sim(i);
            if chunk.iter().filter(|&&j| j != i).all(|&j| sim(j) < own) {
                hits += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
