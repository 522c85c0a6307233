//! Parameter storage and the small set of layers the models are built from.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Registers parameters under a dotted name prefix with seeded init.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Uniform in `[-bound, bound]`, rounded to `f32`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| (self.rng.random_range(-bound..=bound) as f32) as f64)
            .collect();
        let t = Tensor::new(shape.to_vec(), data).expect("param shape");
        let full = self.full(name);
        self.store.add(full, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let t = Tensor::new(shape.to_vec(), vec![value; n]).expect("param shape");
        let full = self.full(name);
        self.store.add(full, t)
    }
}

/// Affine map `x·W + b` with `W` stored `d_in × d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut pb = pb.sub(name);
        let w = pb.uniform("weight", &[d_in, d_out], bound);
        let b = pb.uniform("bias", &[1, d_out], bound);
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize) -> Self {
        let mut pb = pb.sub(name);
        let gain = pb.constant("gain", &[1, d], 1.0);
        let bias = pb.constant("bias", &[1, d], 0.0);
        Self {
            gain,
            bias,
            eps: LN_EPS,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        t.layer_norm(x, g, b, self.eps)
    }
}

/// Two-layer GELU feed-forward network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize, hidden: usize) -> Self {
        let mut pb = pb.sub(name);
        Self {
            up: Linear::new(&mut pb, "up", d, hidden),
            down: Linear::new(&mut pb, "down", hidden, d),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(t, x);
        let h = t.gelu(h);
        self.down.forward(t, h)
    }
}

/// Multi-head attention with separate query and key/value sources.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let mut pb = pb.sub(name);
        Self {
            q: Linear::new(&mut pb, "q", d, d),
            k: Linear::new(&mut pb, "k", d, d),
            v: Linear::new(&mut pb, "v", d, d),
            o: Linear::new(&mut pb, "o", d, d),
            heads,
        }
    }

    pub fn forward(&self, t: &mut Tape, query: Var, context: Var) -> Var {
        let q = self.q.forward(t, query);
        let k = self.k.forward(t, context);
        let v = self.v.forward(t, context);
        let a = t.attention(q, k, v, self.heads);
        self.o.forward(t, a)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize, hidden: usize, heads: usize) -> Self {
        let mut pb = pb.sub(name);
        Self {
            ln1: LayerNorm::new(&mut pb, "ln1", d),
            attn: Attention::new(&mut pb, "attn", d, heads),
            ln2: LayerNorm::new(&mut pb, "ln2", d),
            ffn: FeedForward::new(&mut pb, "ffn", d, hidden),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let rows = t.shape(x).0;
        self.forward_keys(t, x, rows)
    }

    /// Self-attention where only the first `keys` rows act as keys/values.
    pub fn forward_keys(&self, t: &mut Tape, x: Var, keys: usize) -> Var {
        let h = self.ln1.forward(t, x);
        let ctx = if keys == t.shape(h).0 {
            h
        } else {
            t.slice_rows(h, 0, keys)
        };
        let a = self.attn.forward(t, h, ctx);
        let x = t.add(x, a);
        let h = self.ln2.forward(t, x);
        let f = self.ffn.forward(t, h);
        t.add(x, f)
    }
}

/// `LN(FFN(CA(query, ctx, ctx) + query))`: the cross-fusion block form.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub attn: Attention,
    pub ffn: FeedForward,
    pub ln: LayerNorm,
}

impl FusionBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize, hidden: usize, heads: usize) -> Self {
        let mut pb = pb.sub(name);
        Self {
            attn: Attention::new(&mut pb, "attn", d, heads),
            ffn: FeedForward::new(&mut pb, "ffn", d, hidden),
            ln: LayerNorm::new(&mut pb, "ln", d),
        }
    }

    pub fn forward(&self, t: &mut Tape, query: Var, ctx: Var) -> Var {
        let a = self.attn.forward(t, query, ctx);
        let r = t.add(a, query);
        let f = self.ffn.forward(t, r);
        self.ln.forward(t, f)
    }
}

/// Standard sinusoidal code for a scalar position.
pub fn sinusoid(pos: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let k = (i / 2) as f64;
            let freq = (-(10000f64.ln()) * 2.0 * k / d as f64).exp();
            if i % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}

/// `n × d` table of sinusoidal position codes for rows `0..n`.
pub fn sinusoid_table(n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for p in 0..n {
        data.extend(sinusoid(p as f64, d));
    }
    Tensor::matrix(n, d, data)
}
