//! Scene encoding and the fusion of scene and text features into a single
//! condition vector, with the ablation variants behind one interface.

mod point;

pub use point::{PointEncoder, SceneGeometry};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::nn::{Attention, FusionBlock, Linear, ParamBuilder};
use crate::tensor::{Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("scene cloud has no points")]
    EmptyScene,
    #[error("text has no tokens")]
    EmptyText,
    #[error("unknown fusion kind {0:?}")]
    UnknownKind(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Text and scene cross-attend to each other in parallel.
    ParallelCross,
    /// Two stacked cross-attentions, both queried by the scene.
    SceneQueried,
    /// Two stacked cross-attentions, both queried by the text.
    TextQueried,
    /// Similarity-map pooling of the scene per token plus the text branch.
    Triple,
    /// Self-attention over the concatenated token and point rows.
    ConcatSelf,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::ParallelCross,
        FusionKind::SceneQueried,
        FusionKind::TextQueried,
        FusionKind::Triple,
        FusionKind::ConcatSelf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::ParallelCross => "parallel_cross",
            FusionKind::SceneQueried => "scene_queried",
            FusionKind::TextQueried => "text_queried",
            FusionKind::Triple => "triple",
            FusionKind::ConcatSelf => "concat_self",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FusionError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionDims {
    /// Shared scene/text width after projection.
    pub d: usize,
    /// Width of the incoming token features.
    pub d_text: usize,
    /// Condition width.
    pub d_c: usize,
    pub heads: usize,
}

/// Every intermediate of one fusion pass. Scene rows are in the canonical
/// order of the [`SceneGeometry`] they came from.
#[derive(Clone, Debug)]
pub struct FusionActivations {
    /// Encoder scene features, `M × d`.
    pub f_p_enc: Var,
    /// Raw `(x, y, z, r, g, b)` rows, `M × 6`.
    pub f_p_raw: Var,
    /// Incoming token features, `L × d_text`.
    pub f_l: Var,
    pub f_p_se: Var,
    pub f_l_se: Var,
    /// Position-injected scene features, `M × d`.
    pub f_pc: Var,
    /// Text-side fused rows (`L × d`) when the variant has them.
    pub fused_text: Option<Var>,
    /// Scene-side fused rows (`M × d`, or `L × d` for the triple map).
    pub fused_scene: Option<Var>,
    /// Triple-fusion similarity map, `M × L`.
    pub similarity: Option<Var>,
    /// Pooled `1 × d` pieces concatenated into the head input.
    pub pooled: Vec<Var>,
    /// `1 × d_c`.
    pub z_c: Var,
}

#[derive(Clone, Debug)]
enum Head {
    ParallelCross { text: FusionBlock, scene: FusionBlock },
    SceneQueried { first: FusionBlock, second: FusionBlock },
    TextQueried { first: FusionBlock, second: FusionBlock },
    Triple { text: FusionBlock },
    ConcatSelf { block: FusionBlock },
}

/// The full conditioning path from a scene cloud and token features to z_c.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub kind: FusionKind,
    pub dims: FusionDims,
    pub point: PointEncoder,
    pub text_proj: Linear,
    pub scene_self: Attention,
    pub text_self: Attention,
    pub inject: Linear,
    head: Head,
    pub out: Linear,
}

impl Fusion {
    pub fn new(pb: &mut ParamBuilder, name: &str, kind: FusionKind, dims: FusionDims) -> Self {
        let FusionDims { d, d_text, d_c, heads } = dims;
        let mut pb = pb.sub(name);
        let point = PointEncoder::new(&mut pb, "point", d, heads);
        let text_proj = Linear::new(&mut pb, "text_proj", d_text, d);
        let scene_self = Attention::new(&mut pb, "scene_self", d, heads);
        let text_self = Attention::new(&mut pb, "text_self", d, heads);
        let inject = Linear::new(&mut pb, "inject", d + 6, d);
        let mut block = |n: &str| FusionBlock::new(&mut pb, n, d, 2 * d, heads);
        let (head, pieces) = match kind {
            FusionKind::ParallelCross => (
                Head::ParallelCross {
                    text: block("cross_text"),
                    scene: block("cross_scene"),
                },
                3,
            ),
            FusionKind::SceneQueried => (
                Head::SceneQueried {
                    first: block("scene_q1"),
                    second: block("scene_q2"),
                },
                2,
            ),
            FusionKind::TextQueried => (
                Head::TextQueried {
                    first: block("text_q1"),
                    second: block("text_q2"),
                },
                2,
            ),
            FusionKind::Triple => (Head::Triple { text: block("cross_text") }, 3),
            FusionKind::ConcatSelf => (Head::ConcatSelf { block: block("concat") }, 2),
        };
        let out = Linear::new(&mut pb, "out", pieces * d, d_c);
        Self {
            kind,
            dims,
            point,
            text_proj,
            scene_self,
            text_self,
            inject,
            head,
            out,
        }
    }

    /// Residual self-attention on each modality; text is projected to the
    /// shared width first.
    pub fn self_enhance(&self, t: &mut Tape, f_p: Var, f_l: Var) -> (Var, Var) {
        let a = self.scene_self.forward(t, f_p, f_p);
        let p = t.add(f_p, a);
        let l = self.text_proj.forward(t, f_l);
        let b = self.text_self.forward(t, l, l);
        let l = t.add(l, b);
        (p, l)
    }

    /// `FC(F_p' ⊕ f_p)`.
    pub fn position_inject(&self, t: &mut Tape, f_p_se: Var, f_p_raw: Var) -> Result<Var, FusionError> {
        let (a, b) = (t.shape(f_p_se).0, t.shape(f_p_raw).0);
        if a != b {
            return Err(FusionError::Shape(format!("{a} scene feature rows vs {b} raw rows")));
        }
        let x = t.concat_cols(&[f_p_se, f_p_raw]);
        Ok(self.inject.forward(t, x))
    }

    /// Runs the whole path and keeps every intermediate.
    pub fn forward(&self, t: &mut Tape, geom: &SceneGeometry, f_l: Var) -> Result<FusionActivations, FusionError> {
        let (l, w) = t.shape(f_l);
        if l == 0 {
            return Err(FusionError::EmptyText);
        }
        if w != self.dims.d_text {
            return Err(FusionError::Shape(format!("token width {w}, expected {}", self.dims.d_text)));
        }
        let f_p_enc = self.point.forward_canonical(t, geom);
        let f_p_raw = t.constant(geom.features.clone());
        let (f_p_se, f_l_se) = self.self_enhance(t, f_p_enc, f_l);
        let f_pc = self.position_inject(t, f_p_se, f_p_raw)?;

        let mut fused_text = None;
        let mut fused_scene = None;
        let mut similarity = None;
        let pooled = match &self.head {
            Head::ParallelCross { text, scene } => {
                let fl = text.forward(t, f_l_se, f_pc);
                let fp = scene.forward(t, f_pc, f_l_se);
                fused_text = Some(fl);
                fused_scene = Some(fp);
                vec![t.mean_rows(f_l_se), t.mean_rows(fp), t.mean_rows(fl)]
            }
            Head::SceneQueried { first, second } => {
                let fpq = first.forward(t, f_pc, f_l_se);
                let fp = second.forward(t, f_pc, fpq);
                fused_scene = Some(fp);
                vec![t.mean_rows(fp), t.mean_rows(f_l_se)]
            }
            Head::TextQueried { first, second } => {
                let flq = first.forward(t, f_l_se, f_pc);
                let fl = second.forward(t, f_l_se, flq);
                fused_text = Some(fl);
                vec![t.mean_rows(fl), t.mean_rows(f_l_se)]
            }
            Head::Triple { text } => {
                let s = t.matmul_nt(f_pc, f_l_se);
                let s = t.scale(s, 1.0 / (self.dims.d as f64).sqrt());
                let wmap = t.softmax_cols(s);
                let wt = t.transpose(wmap);
                let fp = t.matmul(wt, f_pc);
                let fl = text.forward(t, f_l_se, f_pc);
                similarity = Some(wmap);
                fused_scene = Some(fp);
                fused_text = Some(fl);
                vec![t.mean_rows(fp), t.mean_rows(f_l_se), t.mean_rows(fl)]
            }
            Head::ConcatSelf { block } => {
                let x = t.concat_rows(&[f_l_se, f_pc]);
                let y = block.forward(t, x, x);
                let m = t.shape(f_pc).0;
                let yt = t.slice_rows(y, 0, l);
                let yp = t.slice_rows(y, l, l + m);
                fused_text = Some(yt);
                fused_scene = Some(yp);
                vec![t.mean_rows(yt), t.mean_rows(yp)]
            }
        };
        let z_c = self.make_condition(t, &pooled);
        Ok(FusionActivations {
            f_p_enc,
            f_p_raw,
            f_l,
            f_p_se,
            f_l_se,
            f_pc,
            fused_text,
            fused_scene,
            similarity,
            pooled,
            z_c,
        })
    }

    /// Linear head over the concatenated pooled pieces.
    pub fn make_condition(&self, t: &mut Tape, pooled: &[Var]) -> Var {
        let x = t.concat_cols(pooled);
        self.out.forward(t, x)
    }

    /// Shorthand for `forward(..).z_c`.
    pub fn condition(&self, t: &mut Tape, geom: &SceneGeometry, f_l: Var) -> Result<Var, FusionError> {
        Ok(self.forward(t, geom, f_l)?.z_c)
    }
}
