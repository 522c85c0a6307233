//! Finite-difference checks for every differentiable tape primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmd::tensor::gradcheck::check;
use stmd::tensor::nn::{ParamId, ParamStore};
use stmd::tensor::{Tape, Tensor, Var};

const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Reduces an arbitrary-shaped output to a scalar through fixed random
/// weights so every output entry contributes a distinct cotangent.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Var {
    let (r, c) = t.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(random(&mut rng, r, c));
    let p = t.mul(y, w);
    t.sum(p)
}

fn store_with(shapes: &[(usize, usize)], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| s.add(format!("p{i}"), random(&mut rng, r, c)))
        .collect();
    (s, ids)
}

fn assert_check(name: &str, store: &ParamStore, f: impl Fn(&mut Tape) -> Var) {
    let report = check(store, f, 64, 1).unwrap();
    assert!(
        report.passes(TOL),
        "{name}: max rel err {:.3e} at {}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn binary_and_broadcast_ops() {
    let (s, ids) = store_with(&[(3, 4), (4, 2), (3, 4), (1, 4), (3, 1), (2, 4)], 11);
    let [a, b, c, row, col, d] = ids[..] else { unreachable!() };
    assert_check("matmul", &s, |t| {
        let (x, y) = (t.param(a), t.param(b));
        let z = t.matmul(x, y);
        weighted_sum(t, z, 1)
    });
    assert_check("matmul_nt", &s, |t| {
        let (x, y) = (t.param(a), t.param(d));
        let z = t.matmul_nt(x, y);
        weighted_sum(t, z, 2)
    });
    assert_check("add/sub/mul", &s, |t| {
        let (x, y) = (t.param(a), t.param(c));
        let p = t.add(x, y);
        let q = t.sub(p, y);
        let z = t.mul(q, y);
        weighted_sum(t, z, 3)
    });
    assert_check("add_row/add_col/mul_col", &s, |t| {
        let (x, r, k) = (t.param(a), t.param(row), t.param(col));
        let y = t.add_row(x, r);
        let y = t.add_col(y, k);
        let y = t.mul_col(y, k);
        weighted_sum(t, y, 4)
    });
    assert_check("transpose/scale", &s, |t| {
        let x = t.param(a);
        let y = t.transpose(x);
        let y = t.scale(y, -1.7);
        weighted_sum(t, y, 5)
    });
}

#[test]
fn elementwise_ops() {
    let (s, ids) = store_with(&[(3, 5)], 12);
    let a = ids[0];
    assert_check("gelu", &s, |t| {
        let x = t.param(a);
        let y = t.gelu(x);
        weighted_sum(t, y, 6)
    });
    assert_check("sin/cos/exp", &s, |t| {
        let x = t.param(a);
        let y = t.sin(x);
        let z = t.cos(x);
        let w = t.exp(x);
        let p = t.mul(y, z);
        let q = t.add(p, w);
        weighted_sum(t, q, 7)
    });
}

#[test]
fn normalizing_ops() {
    let (s, ids) = store_with(&[(4, 6), (1, 6), (1, 6)], 13);
    let [a, g, b] = ids[..] else { unreachable!() };
    assert_check("softmax", &s, |t| {
        let x = t.param(a);
        let y = t.softmax(x);
        weighted_sum(t, y, 8)
    });
    assert_check("softmax_cols", &s, |t| {
        let x = t.param(a);
        let y = t.softmax_cols(x);
        weighted_sum(t, y, 9)
    });
    assert_check("log_softmax", &s, |t| {
        let x = t.param(a);
        let y = t.log_softmax(x);
        weighted_sum(t, y, 10)
    });
    assert_check("layer_norm", &s, |t| {
        let (x, gg, bb) = (t.param(a), t.param(g), t.param(b));
        let y = t.layer_norm(x, gg, bb, 1e-5);
        weighted_sum(t, y, 11)
    });
    assert_check("normalize_rows", &s, |t| {
        let x = t.param(a);
        let y = t.normalize_rows(x, 1e-12);
        weighted_sum(t, y, 12)
    });
}

#[test]
fn structural_ops() {
    let (s, ids) = store_with(&[(4, 3), (4, 2), (2, 3)], 14);
    let [a, b, c] = ids[..] else { unreachable!() };
    assert_check("slice/concat", &s, |t| {
        let (x, y, z) = (t.param(a), t.param(b), t.param(c));
        let xc = t.concat_cols(&[x, y]);
        let xr = t.concat_rows(&[x, z]);
        let p = t.slice_cols(xc, 1, 4);
        let q = t.slice_rows(xr, 2, 6);
        let r = t.mul(p, q);
        weighted_sum(t, r, 13)
    });
    assert_check("gather/mean/sum_cols", &s, |t| {
        let x = t.param(a);
        let g = t.gather_rows(x, &[3, 0, 0, 2, 1, 3]);
        let m = t.mean_rows(g);
        let sc = t.sum_cols(g);
        let a1 = weighted_sum(t, m, 14);
        let a2 = weighted_sum(t, sc, 15);
        t.add(a1, a2)
    });
}

#[test]
fn attention_ops() {
    let (s, ids) = store_with(&[(3, 4), (5, 4), (5, 2), (6, 4)], 15);
    let [q, k, v, x] = ids[..] else { unreachable!() };
    assert_check("attention", &s, |t| {
        let (qq, kk, vv) = (t.param(q), t.param(k), t.param(v));
        let y = t.attention(qq, kk, vv, 1);
        weighted_sum(t, y, 16)
    });
    assert_check("attention 2 heads", &s, |t| {
        let (qq, kk, vv) = (t.param(q), t.param(k), t.param(v));
        let y = t.attention(qq, kk, vv, 2);
        weighted_sum(t, y, 17)
    });
    let nbrs = [0, 1, 2, 1, 2, 3, 2, 3, 4, 5, 4, 0, 4, 5, 1, 5, 0, 3];
    assert_check("neighbor_attention", &s, |t| {
        let xx = t.param(x);
        let y = t.neighbor_attention(xx, xx, xx, &nbrs, 3);
        weighted_sum(t, y, 18)
    });
}

#[test]
fn matmul_chain_gradient() {
    let (s, ids) = store_with(&[(2, 3), (3, 4), (4, 2)], 16);
    assert_check("chain", &s, |t| {
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let c = t.param(ids[2]);
        let ab = t.matmul(a, b);
        let abc = t.matmul(ab, c);
        let sq = t.mul(abc, abc);
        t.sum(sq)
    });
}

#[test]
fn backward_is_bit_deterministic() {
    let (s, ids) = store_with(&[(4, 4), (4, 4)], 17);
    let run = || {
        let mut t = Tape::with_params(&s);
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let y = t.attention(a, b, b, 1);
        let l = weighted_sum(&mut t, y, 19);
        let g = t.backward(l).unwrap();
        (g.param(ids[0]).unwrap().clone(), g.param(ids[1]).unwrap().clone())
    };
    assert_eq!(run(), run());
}
