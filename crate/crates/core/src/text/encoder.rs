use super::TextPrompt;
use crate::tensor::nn::{sinusoid_table, EncoderLayer, ParamBuilder};
use crate::tensor::{Tape, Var};
use crate::tensor::nn::ParamId;

/// Learned token embedding plus sinusoidal positions, followed by pre-norm
/// self-attention blocks. Pad positions never act as keys.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embed: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub d: usize,
}

impl TextEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, vocab: usize, d: usize, layers: usize, heads: usize) -> Self {
        let mut pb = pb.sub(name);
        let embed = pb.uniform("embed", &[vocab, d], 1.0);
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(&mut pb, &format!("layer{i}"), d, 2 * d, heads))
            .collect();
        Self { embed, layers, d }
    }

    fn embed_rows(&self, t: &mut Tape, ids: &[u32]) -> Var {
        let table = t.param(self.embed);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = t.gather_rows(table, &idx);
        let pos = t.constant(sinusoid_table(ids.len(), self.d));
        t.add(x, pos)
    }

    /// Token features for the non-pad prefix only (`valid × d`).
    pub fn forward(&self, t: &mut Tape, prompt: &TextPrompt) -> Var {
        let mut x = self.embed_rows(t, prompt.valid_ids());
        for layer in &self.layers {
            x = layer.forward(t, x);
        }
        x
    }

    /// Features for the full padded sequence (`max_len × d`). Keys are
    /// restricted to the non-pad prefix, so its rows equal [`Self::forward`].
    pub fn forward_padded(&self, t: &mut Tape, prompt: &TextPrompt) -> Var {
        let mut x = self.embed_rows(t, &prompt.ids);
        for layer in &self.layers {
            x = layer.forward_keys(t, x, prompt.valid);
        }
        x
    }
}
