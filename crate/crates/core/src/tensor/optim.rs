use super::nn::ParamStore;
use super::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam moments. Parameters and moments are rounded to `f32` after each
/// update so a checkpoint captures the optimizer state exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

fn f32r(x: f64) -> f64 {
    x as f32 as f64
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Applies one update. `grads[i]` aligns with parameter index `i`;
    /// `None` means the parameter received no gradient this step.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let c = &self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flatten()
                    .flat_map(|g| g.data())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] * scale;
                m[j] = f32r(c.beta1 * m[j] + (1.0 - c.beta1) * gj);
                v[j] = f32r(c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj);
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] = f32r(p[j] - c.lr * mh / (vh.sqrt() + c.eps));
            }
        }
    }
}
