use super::kernels::{mm_acc, mm_nt_acc, mm_tn_acc, normalize_row, softmax_row};
use super::nn::{ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    SumCols(Var),
    Sum(Var),
    NeighborAttention {
        q: Var,
        k: Var,
        v: Var,
        nbrs: Vec<usize>,
        per_row: usize,
        probs: Vec<f64>,
        scale: f64,
    },
    Step,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Exp(_) => "exp",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::SumCols(_) => "sum_cols",
            Op::Sum(_) => "sum",
            Op::NeighborAttention { .. } => "neighbor_attention",
            Op::Step => "step",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node, if it received one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for parameter `id`; `None` when the parameter was unused.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }
}

/// Ordered record of primitive ops over 2-D values.
///
/// Shape errors inside the tape are programming errors and panic; numeric
/// failures (NaN/Inf) are recorded and surfaced by [`Tape::backward`] and
/// [`Tape::check_finite`].
pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    bound: Vec<Option<Var>>,
    track_params: bool,
    non_finite: Option<&'static str>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn binary_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    (y, dy)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            bound: Vec::new(),
            track_params: false,
            non_finite: None,
        }
    }

    /// Tape whose parameter leaves require gradients.
    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params),
            bound: vec![None; params.len()],
            track_params: true,
            non_finite: None,
        }
    }

    /// Tape for evaluation only: parameters are constants.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            track_params: false,
            ..Self::with_params(params)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(TensorError::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// Leaf that participates in differentiation iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let g = t.requires_grad();
        let t = reshape2(t);
        self.push(t, Op::Leaf, g)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = reshape2(t);
        self.push(t, Op::Leaf, false)
    }

    /// Binds a parameter from the attached store; repeated calls return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let t = reshape2(store.get(id).clone());
        let v = self.push(t, Op::Param(id), self.track_params);
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {m}x{k} · {k2}x{n}");
        let mut out = vec![0.0; m * n];
        mm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let g = self.g(a) || self.g(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), g)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dims");
        let mut out = vec![0.0; m * n];
        mm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let g = self.g(a) || self.g(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMulNT(a, b), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let g = self.g(a);
        self.push(t, Op::Transpose(a), g)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        binary_shape(ta, tb, op.name());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), data);
        let g = self.g(a) || self.g(b);
        self.push(t, op, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m×n] + b[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "add_row bias shape");
        let bd = self.value(b).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&bd) {
                *o += bv;
            }
        }
        let g = self.g(a) || self.g(b);
        self.push(Tensor::matrix(m, n, out), Op::AddRow(a, b), g)
    }

    /// `a[m×n] + c[m×1]` broadcast over columns.
    pub fn add_col(&mut self, a: Var, c: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(c), (m, 1), "add_col shape");
        let cd = self.value(c).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for (row, cv) in out.chunks_mut(n.max(1)).zip(&cd) {
            for o in row.iter_mut() {
                *o += cv;
            }
        }
        let g = self.g(a) || self.g(c);
        self.push(Tensor::matrix(m, n, out), Op::AddCol(a, c), g)
    }

    /// `a[m×n] ⊙ c[m×1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(c), (m, 1), "mul_col shape");
        let cd = self.value(c).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for (row, cv) in out.chunks_mut(n.max(1)).zip(&cd) {
            for o in row.iter_mut() {
                *o *= cv;
            }
        }
        let g = self.g(a) || self.g(c);
        self.push(Tensor::matrix(m, n, out), Op::MulCol(a, c), g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let g = self.g(a);
        self.push(t, Op::Scale(a, s), g)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        let g = self.g(a);
        self.push(t, op, g)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| gelu(x).0, Op::Gelu(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Indicator `x > threshold`; not differentiable.
    pub fn step(&mut self, a: Var, threshold: f64) -> Var {
        let t = self
            .value(a)
            .map(|x| if x > threshold { 1.0 } else { 0.0 });
        let g = self.g(a);
        self.push(t, Op::Step, g)
    }

    /// Row-wise softmax (last axis).
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert!(n > 0, "softmax over empty axis");
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_row(row);
        }
        let g = self.g(a);
        self.push(Tensor::matrix(m, n, out), Op::Softmax(a), g)
    }

    /// Softmax over rows (each column sums to one).
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let t = self.transpose(a);
        let s = self.softmax(t);
        self.transpose(s)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert!(n > 0, "log_softmax over empty axis");
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let g = self.g(a);
        self.push(Tensor::matrix(m, n, out), Op::LogSoftmax(a), g)
    }

    /// Layer norm over the last axis; `gain` and `bias` are `1×d`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (m, d) = self.shape(x);
        assert!(d > 0, "layer_norm over empty axis");
        assert_eq!(self.shape(gain), (1, d));
        assert_eq!(self.shape(bias), (1, d));
        let gd = self.value(gain).data().to_vec();
        let bd = self.value(bias).data().to_vec();
        let mut xhat = Vec::with_capacity(m * d);
        let mut rstd = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * d);
        for row in self.value(x).data().chunks(d) {
            let (xh, r) = normalize_row(row, eps);
            for ((v, g), b) in xh.iter().zip(&gd).zip(&bd) {
                out.push(v * g + b);
            }
            xhat.extend(xh);
            rstd.push(r);
        }
        let g = self.g(x) || self.g(gain) || self.g(bias);
        self.push(
            Tensor::matrix(m, d, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            g,
        )
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let (m, n) = self.shape(x);
        let mut out = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(m);
        for row in out.chunks_mut(n.max(1)) {
            let nrm = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            for v in row.iter_mut() {
                *v /= nrm;
            }
            norms.push(nrm);
        }
        let g = self.g(x);
        self.push(Tensor::matrix(m, n, out), Op::NormalizeRows { x, norms }, g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start <= end && end <= n, "slice_cols {start}..{end} of {n}");
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let g = self.g(a);
        self.push(Tensor::matrix(m, w, out), Op::SliceCols(a, start), g)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start <= end && end <= m, "slice_rows {start}..{end} of {m}");
        let out = self.value(a).data()[start * n..end * n].to_vec();
        let g = self.g(a);
        self.push(Tensor::matrix(end - start, n, out), Op::SliceRows(a, start), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, m, "concat_cols row mismatch");
                self.shape(p).1
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let g = parts.iter().any(|&p| self.g(p));
        self.push(Tensor::matrix(m, n, out), Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            assert_eq!(self.shape(p).1, n, "concat_rows col mismatch");
            m += self.shape(p).0;
            out.extend_from_slice(self.value(p).data());
        }
        let g = parts.iter().any(|&p| self.g(p));
        self.push(Tensor::matrix(m, n, out), Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (m, n) = self.shape(a);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m, "gather_rows index {i} out of {m}");
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let g = self.g(a);
        self.push(
            Tensor::matrix(idx.len(), n, out),
            Op::GatherRows(a, idx.to_vec()),
            g,
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert!(m > 0, "mean_rows over empty axis");
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let g = self.g(a);
        self.push(Tensor::matrix(1, n, out), Op::MeanRows(a), g)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks(n.max(1))
            .map(|r| r.iter().sum())
            .collect();
        let g = self.g(a);
        self.push(Tensor::matrix(m, 1, out), Op::SumCols(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let g = self.g(a);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        assert!(n > 0, "mean of empty tensor");
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Attention restricted to a fixed neighbour list per query row:
    /// row `i` attends over keys `nbrs[i*per_row .. (i+1)*per_row]`.
    pub fn neighbor_attention(&mut self, q: Var, k: Var, v: Var, nbrs: &[usize], per_row: usize) -> Var {
        let (m, d) = self.shape(q);
        let (mk, dk) = self.shape(k);
        let (mv, dv) = self.shape(v);
        assert_eq!(d, dk);
        assert_eq!(mk, mv);
        assert!(per_row > 0);
        assert_eq!(nbrs.len(), m * per_row, "neighbour list length");
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; m * per_row];
        let mut out = vec![0.0; m * dv];
        for i in 0..m {
            let qi = &qd[i * d..(i + 1) * d];
            let p = &mut probs[i * per_row..(i + 1) * per_row];
            for (slot, &j) in p.iter_mut().zip(&nbrs[i * per_row..(i + 1) * per_row]) {
                assert!(j < mk);
                let kj = &kd[j * d..(j + 1) * d];
                *slot = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_row(p);
            let oi = &mut out[i * dv..(i + 1) * dv];
            for (&pj, &j) in p.iter().zip(&nbrs[i * per_row..(i + 1) * per_row]) {
                for (o, x) in oi.iter_mut().zip(&vd[j * dv..(j + 1) * dv]) {
                    *o += pj * x;
                }
            }
        }
        let g = self.g(q) || self.g(k) || self.g(v);
        self.push(
            Tensor::matrix(m, dv, out),
            Op::NeighborAttention {
                q,
                k,
                v,
                nbrs: nbrs.to_vec(),
                per_row,
                probs,
                scale,
            },
            g,
        )
    }

    /// Scaled dot-product attention with `heads` column groups.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (_, d) = self.shape(q);
        let (lk, dk) = self.shape(k);
        let (_, dv) = self.shape(v);
        assert!(lk > 0, "attention over zero keys");
        assert_eq!(d, dk, "attention q/k width");
        assert!(heads > 0 && d % heads == 0 && dv % heads == 0, "head split");
        if heads == 1 {
            return self.attention_head(q, k, v);
        }
        let (hd, hv) = (d / heads, dv / heads);
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = self.slice_cols(q, h * hd, (h + 1) * hd);
                let kh = self.slice_cols(k, h * hd, (h + 1) * hd);
                let vh = self.slice_cols(v, h * hv, (h + 1) * hv);
                self.attention_head(qh, kh, vh)
            })
            .collect();
        self.concat_cols(&outs)
    }

    fn attention_head(&mut self, q: Var, k: Var, v: Var) -> Var {
        let d = self.shape(q).1;
        let s = self.matmul_nt(q, k);
        let s = self.scale(s, 1.0 / (d as f64).sqrt());
        let p = self.softmax(s);
        self.matmul(p, v)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        self.check_finite()?;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut leaves: Vec<Option<Tensor>> = vec![None; n];
        let mut params: Vec<Option<Tensor>> = vec![None; self.bound.len()];
        if self.nodes[loss.0].grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (rows, cols) = (node.value.rows(), node.value.cols());
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::matrix(rows, cols, g));
                    continue;
                }
                Op::Param(id) => {
                    let t = Tensor::new(node.value.shape().to_vec(), g.clone())
                        .expect("param grad shape");
                    params[id.index()] = Some(t);
                    leaves[i] = Some(Tensor::matrix(rows, cols, g));
                    continue;
                }
                _ => {}
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
        }
        Ok(Gradients { leaves, params })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let (m, n) = (out.rows(), out.cols());
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let k = self.shape(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    mm_nt_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    mm_tn_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let k = self.shape(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    mm_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    mm_tn_acc(g, self.value(*a).data(), gb, m, n, k);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[j * m + i] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.acc(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let bd = self.value(*b).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *x += y * bv;
                    }
                }
                let ad = self.value(*a).data();
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, y), av) in gb.iter_mut().zip(g).zip(ad) {
                        *x += y * av;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddCol(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gc) = self.acc(grads, *c) {
                    for (x, row) in gc.iter_mut().zip(g.chunks(n.max(1))) {
                        *x += row.iter().sum::<f64>();
                    }
                }
            }
            Op::MulCol(a, c) => {
                let cd = self.value(*c).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, row) in g.chunks(n.max(1)).enumerate() {
                        for (x, y) in ga[i * n..(i + 1) * n].iter_mut().zip(row) {
                            *x += y * cd[i];
                        }
                    }
                }
                let ad = self.value(*a).data();
                if let Some(gc) = self.acc(grads, *c) {
                    for (i, row) in g.chunks(n.max(1)).enumerate() {
                        gc[i] += row
                            .iter()
                            .zip(&ad[i * n..(i + 1) * n])
                            .map(|(y, x)| y * x)
                            .sum::<f64>();
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * s);
                }
            }
            Op::Gelu(a) | Op::Sin(a) | Op::Cos(a) | Op::Exp(a) => {
                let xs = self.value(*a).data();
                let ys = out.data();
                let deriv: Box<dyn Fn(f64, f64) -> f64> = match op {
                    Op::Gelu(_) => Box::new(|x, _| gelu(x).1),
                    Op::Sin(_) => Box::new(|x, _| x.cos()),
                    Op::Cos(_) => Box::new(|x, _| -x.sin()),
                    _ => Box::new(|_, y| y),
                };
                if let Some(ga) = self.acc(grads, *a) {
                    for (((x, gy), xv), yv) in ga.iter_mut().zip(g).zip(xs).zip(ys) {
                        *x += gy * deriv(*xv, *yv);
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), gar) in g.chunks(n).zip(out.data().chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((o, gy), y) in gar.iter_mut().zip(gr).zip(yr) {
                            *o += y * (gy - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), gar) in g.chunks(n).zip(out.data().chunks(n)).zip(ga.chunks_mut(n)) {
                        let gs: f64 = gr.iter().sum();
                        for ((o, gy), y) in gar.iter_mut().zip(gr).zip(yr) {
                            *o += gy - y.exp() * gs;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gd = self.value(*gain).data().to_vec();
                if let Some(gx) = self.acc(grads, *x) {
                    let df = n as f64;
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let xh = &xhat[r * n..(r + 1) * n];
                        let gxh: Vec<f64> = gr.iter().zip(&gd).map(|(a, b)| a * b).collect();
                        let s1: f64 = gxh.iter().sum();
                        let s2: f64 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for ((o, gh), xv) in gx[r * n..(r + 1) * n].iter_mut().zip(&gxh).zip(xh) {
                            *o += rstd[r] / df * (df * gh - s1 - xv * s2);
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gain) {
                    for (gr, xh) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((o, a), b) in gg.iter_mut().zip(gr).zip(xh) {
                            *o += a * b;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for gr in g.chunks(n) {
                        gb.iter_mut().zip(gr).for_each(|(o, a)| *o += a);
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let yr = &out.data()[r * n..(r + 1) * n];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gy), y) in gx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(yr) {
                            *o += (gy - y * dot) / norms[r];
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let src_n = self.shape(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * src_n + start + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, y) in ga[start * n..(start + m) * n].iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if let Some(gp) = self.acc(grads, *p) {
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * n + off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.acc(grads, *p) {
                        for (x, y) in gp.iter_mut().zip(&g[off..off + len]) {
                            *x += y;
                        }
                    }
                    off += len;
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..n {
                            ga[i * n + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                let rows = self.shape(*a).0;
                if let Some(ga) = self.acc(grads, *a) {
                    let inv = 1.0 / rows as f64;
                    for row in ga.chunks_mut(n) {
                        for (x, y) in row.iter_mut().zip(g) {
                            *x += y * inv;
                        }
                    }
                }
            }
            Op::SumCols(a) => {
                let w = self.shape(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, row) in ga.chunks_mut(w.max(1)).enumerate() {
                        row.iter_mut().for_each(|x| *x += g[r]);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::NeighborAttention {
                q,
                k,
                v,
                nbrs,
                per_row,
                probs,
                scale,
            } => {
                let d = self.shape(*q).1;
                let dv = n;
                let (qd, kd, vd) = (
                    self.value(*q).data().to_vec(),
                    self.value(*k).data().to_vec(),
                    self.value(*v).data().to_vec(),
                );
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut gs = vec![0.0; *per_row];
                for i in 0..m {
                    let gi = &g[i * dv..(i + 1) * dv];
                    let p = &probs[i * per_row..(i + 1) * per_row];
                    let nb = &nbrs[i * per_row..(i + 1) * per_row];
                    let mut dot = 0.0;
                    for (s, (&pj, &j)) in gs.iter_mut().zip(p.iter().zip(nb)) {
                        let vj = &vd[j * dv..(j + 1) * dv];
                        *s = gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                        dot += pj * *s;
                        for (o, x) in gv[j * dv..(j + 1) * dv].iter_mut().zip(gi) {
                            *o += pj * x;
                        }
                    }
                    for (s, &pj) in gs.iter_mut().zip(p) {
                        *s = pj * (*s - dot) * scale;
                    }
                    let qi = &qd[i * d..(i + 1) * d];
                    for (&s, &j) in gs.iter().zip(nb) {
                        for c in 0..d {
                            gq[i * d + c] += s * kd[j * d + c];
                            gk[j * d + c] += s * qi[c];
                        }
                    }
                }
                for (var, buf) in [(q, gq), (k, gk), (v, gv)] {
                    if let Some(gx) = self.acc(grads, *var) {
                        gx.iter_mut().zip(&buf).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Step => return Err(TensorError::NonDifferentiable("step")),
        }
        Ok(())
    }
}

fn reshape2(t: Tensor) -> Tensor {
    if t.shape().len() == 2 {
        t
    } else {
        let (r, c) = (t.rows(), t.cols());
        let rg = t.requires_grad();
        let m = Tensor::matrix(r, c, t.into_data());
        if rg {
            m.with_grad()
        } else {
            m
        }
    }
}
