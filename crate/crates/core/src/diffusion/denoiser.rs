use crate::tensor::nn::{sinusoid, sinusoid_table, EncoderLayer, LayerNorm, Linear, ParamBuilder};
use crate::tensor::{Tape, Tensor, Var};

/// Transformer over one condition token followed by the noisy frames,
/// predicting the clean motion.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub input: Linear,
    pub cond: Linear,
    pub time_in: Linear,
    pub time_out: Linear,
    pub layers: Vec<EncoderLayer>,
    pub ln_out: LayerNorm,
    pub output: Linear,
    pub d_model: usize,
    pub d_c: usize,
}

impl Denoiser {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        d_pose: usize,
        d_model: usize,
        d_c: usize,
        layers: usize,
        heads: usize,
    ) -> Self {
        let mut pb = pb.sub(name);
        Self {
            input: Linear::new(&mut pb, "input", d_pose, d_model),
            cond: Linear::new(&mut pb, "cond", d_c, d_model),
            time_in: Linear::new(&mut pb, "time_in", d_model, d_model),
            time_out: Linear::new(&mut pb, "time_out", d_model, d_model),
            layers: (0..layers)
                .map(|i| EncoderLayer::new(&mut pb, &format!("layer{i}"), d_model, 2 * d_model, heads))
                .collect(),
            ln_out: LayerNorm::new(&mut pb, "ln_out", d_model),
            output: Linear::new(&mut pb, "output", d_model, d_pose),
            d_model,
            d_c,
        }
    }

    /// `x_t` is `N × d_pose`, `z_c` is `1 × d_c` (`None` is the null
    /// condition used for condition dropout). Returns `N × d_pose`.
    pub fn forward(&self, t: &mut Tape, x_t: Var, step: usize, z_c: Option<Var>) -> Var {
        let n = t.shape(x_t).0;
        let d = self.d_model;
        let z = match z_c {
            Some(z) => z,
            None => t.constant(Tensor::zeros(&[1, self.d_c])),
        };
        let c = self.cond.forward(t, z);
        let te = t.constant(Tensor::row(sinusoid(step as f64, d)));
        let te = self.time_in.forward(t, te);
        let te = t.gelu(te);
        let te = self.time_out.forward(t, te);
        let token = t.add(c, te);

        let h = self.input.forward(t, x_t);
        let pos = t.constant(sinusoid_table(n, d));
        let h = t.add(h, pos);
        let mut x = t.concat_rows(&[token, h]);
        for layer in &self.layers {
            x = layer.forward(t, x);
        }
        let x = self.ln_out.forward(t, x);
        let frames = t.slice_rows(x, 1, n + 1);
        self.output.forward(t, frames)
    }
}
