use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::motion::{decode_on_tape, FeatureLayout, JointVars, RootState};
use crate::tensor::{Tape, Tensor, Var};

/// Smallest per-column scale used for normalization. Near-constant columns
/// (contact flags in a corpus without contacts, root height on flat ground)
/// would otherwise blow up.
pub const STD_FLOOR: f64 = 0.01;

/// Per-column feature mean and scale fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit<'a>(clips: impl IntoIterator<Item = &'a Tensor>) -> Result<Self, DiffusionError> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for c in clips {
            if sum.is_empty() {
                sum = vec![0.0; c.cols()];
                sq = vec![0.0; c.cols()];
            }
            if c.cols() != sum.len() {
                return Err(DiffusionError::Shape(format!("feature width {} vs {}", c.cols(), sum.len())));
            }
            for r in 0..c.rows() {
                for (j, v) in c.row_slice(r).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += c.rows();
        }
        if n == 0 {
            return Err(DiffusionError::Shape("no frames to fit statistics on".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / nf - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Tensor) -> Tensor {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        self.map(x, |v, m, s| v * s + m)
    }

    fn map(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let d = self.dim();
        assert_eq!(x.cols(), d, "feature width");
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % d], self.std[i % d]))
            .collect();
        Tensor::matrix(x.rows(), d, data)
    }

    /// Differentiable [`Self::denormalize`].
    pub fn denormalize_var(&self, t: &mut Tape, x: Var) -> Var {
        let (n, d) = t.shape(x);
        assert_eq!(d, self.dim(), "feature width");
        let scale = t.constant(Tensor::matrix(n, d, self.std.iter().copied().cycle().take(n * d).collect()));
        let mean = t.constant(Tensor::row(self.mean.clone()));
        let y = t.mul(x, scale);
        t.add_row(y, mean)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pos: f64,
    pub vel: f64,
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pos: 1.0,
            vel: 1.0,
            foot: 1.0,
        }
    }
}

/// Ground truth for one training item.
#[derive(Clone, Debug)]
pub struct Target {
    /// Normalized clean features, `N × d`.
    pub features: Tensor,
    pub root: RootState,
    /// Per-frame left/right contact flags.
    pub contacts: Vec<[bool; 2]>,
}

impl Target {
    pub fn new(raw: &Tensor, root: RootState, stats: &FeatureStats) -> Result<Self, DiffusionError> {
        let layout = FeatureLayout::from_dim(raw.cols()).map_err(|e| DiffusionError::Shape(e.to_string()))?;
        if raw.rows() < 2 {
            return Err(DiffusionError::Shape("need at least two frames".into()));
        }
        let c = layout.contacts();
        let contacts = (0..raw.rows()).map(|r| [raw.get(r, c) > 0.5, raw.get(r, c + 1) > 0.5]).collect();
        Ok(Self {
            features: stats.normalize(raw),
            root,
            contacts,
        })
    }
}

/// Loss variables on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub motion: Var,
    pub pos: Var,
    pub vel: Var,
    pub foot: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub motion: f64,
    pub pos: f64,
    pub vel: f64,
    pub foot: f64,
    pub total: f64,
}

impl LossReport {
    pub fn read(t: &Tape, terms: &LossTerms) -> Self {
        Self {
            motion: t.value(terms.motion).item(),
            pos: t.value(terms.pos).item(),
            vel: t.value(terms.vel).item(),
            foot: t.value(terms.foot).item(),
            total: t.value(terms.total).item(),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.motion, self.pos, self.vel, self.foot, self.total]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

fn sq_mean(t: &mut Tape, a: Var) -> Var {
    let s = t.mul(a, a);
    t.mean(s)
}

/// `(N−1) × N` forward-difference operator.
fn diff_matrix(n: usize) -> Tensor {
    let mut d = vec![0.0; (n - 1) * n];
    for r in 0..n - 1 {
        d[r * n + r] = -1.0;
        d[r * n + r + 1] = 1.0;
    }
    Tensor::matrix(n - 1, n, d)
}

/// Reconstruction loss in normalized feature space plus position, velocity
/// and contact-masked foot velocity errors on world joints.
///
/// The ground truth goes through exactly the same arithmetic as the
/// prediction, so a perfect prediction gives exactly zero for every term.
pub fn loss_terms(
    t: &mut Tape,
    pred: Var,
    target: &Target,
    stats: &FeatureStats,
    feet: [usize; 2],
    weights: LossWeights,
) -> LossTerms {
    let (n, d) = t.shape(pred);
    assert_eq!((n, d), (target.features.rows(), target.features.cols()), "prediction shape");
    let layout = FeatureLayout::from_dim(d).expect("validated width");
    let gt = t.constant(target.features.clone());
    let diff = t.sub(pred, gt);
    let motion = sq_mean(t, diff);

    let p_raw = stats.denormalize_var(t, pred);
    let g_raw = stats.denormalize_var(t, gt);
    let pj = decode_on_tape(t, p_raw, target.root, layout);
    let gj = decode_on_tape(t, g_raw, target.root, layout);
    let axes = |j: JointVars| [j.x, j.y, j.z];
    let dmat = t.constant(diff_matrix(n));
    let mask_data: Vec<f64> = target.contacts[..n - 1]
        .iter()
        .flat_map(|c| c.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    let mask = t.constant(Tensor::matrix(n - 1, 2, mask_data));

    let (mut pos, mut vel, mut foot) = (Vec::new(), Vec::new(), Vec::new());
    for (p, g) in axes(pj).into_iter().zip(axes(gj)) {
        let e = t.sub(p, g);
        pos.push(sq_mean(t, e));
        let v = t.matmul(dmat, e);
        vel.push(sq_mean(t, v));
        let l = t.slice_cols(v, feet[0], feet[0] + 1);
        let r = t.slice_cols(v, feet[1], feet[1] + 1);
        let fv = t.concat_cols(&[l, r]);
        let m = t.mul(fv, mask);
        foot.push(sq_mean(t, m));
    }
    let mut sum3 = |v: Vec<Var>| {
        let a = t.add(v[0], v[1]);
        t.add(a, v[2])
    };
    let pos = sum3(pos);
    let vel = sum3(vel);
    let foot = sum3(foot);
    let wp = t.scale(pos, weights.pos);
    let wv = t.scale(vel, weights.vel);
    let wf = t.scale(foot, weights.foot);
    let total = t.add(motion, wp);
    let total = t.add(total, wv);
    let total = t.add(total, wf);
    LossTerms {
        motion,
        pos,
        vel,
        foot,
        total,
    }
}
