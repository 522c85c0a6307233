use super::{Result, Tensor, TensorError};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn mm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn mm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// In-place numerically stable softmax over one contiguous row.
pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    mm_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::matrix(m, n, out))
}

/// Softmax along `axis`, subtracting the slice maximum first.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let rank = x.shape().len();
    if axis >= rank {
        return Err(TensorError::InvalidAxis { axis, rank });
    }
    let extent = x.shape()[axis];
    if extent == 0 {
        return Err(TensorError::EmptyAxis { op: "softmax" });
    }
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut buf = vec![0.0; extent];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            for (e, b) in buf.iter_mut().enumerate() {
                *b = out[base + e * inner];
            }
            softmax_row(&mut buf);
            for (e, b) in buf.iter().enumerate() {
                out[base + e * inner] = *b;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Layer normalization over the last axis with population variance.
pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64], eps: f64) -> Result<Tensor> {
    let d = x.cols();
    if d == 0 {
        return Err(TensorError::EmptyAxis { op: "layer_norm" });
    }
    if gain.len() != d || bias.len() != d {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: vec![gain.len(), bias.len()],
        });
    }
    if eps <= 0.0 {
        return Err(TensorError::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let (xhat, _) = normalize_row(row, eps);
        for ((o, xh), (g, b)) in row.iter_mut().zip(&xhat).zip(gain.iter().zip(bias)) {
            *o = xh * g + b;
        }
    }
    let t = Tensor::new(x.shape().to_vec(), out)?;
    if !t.is_finite() {
        return Err(TensorError::NonFinite { op: "layer_norm" });
    }
    Ok(t)
}

/// Returns the normalized row and `1/sqrt(var + eps)`.
pub(crate) fn normalize_row(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + eps).sqrt();
    (row.iter().map(|v| (v - mean) * rstd).collect(), rstd)
}

/// Single-head scaled dot-product attention `softmax(QKᵀ/√d)·V`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (lq, d) = (q.rows(), q.cols());
    let lk = k.rows();
    if lk == 0 {
        return Err(TensorError::EmptyAxis { op: "attention" });
    }
    if k.cols() != d || v.rows() != lk {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let dv = v.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut scores = vec![0.0; lq * lk];
    mm_nt_acc(q.data(), k.data(), &mut scores, lq, d, lk);
    for row in scores.chunks_mut(lk) {
        for s in row.iter_mut() {
            *s *= scale;
        }
        softmax_row(row);
    }
    let mut out = vec![0.0; lq * dv];
    mm_acc(&scores, v.data(), &mut out, lq, lk, dv);
    let t = Tensor::matrix(lq, dv, out);
    if !t.is_finite() {
        return Err(TensorError::NonFinite { op: "attention" });
    }
    Ok(t)
}
