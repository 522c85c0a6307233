//! Central finite-difference gradient checking.
//!
//! The check re-evaluates the forward closure on perturbed copies of the
//! parameter store and never touches the tape's adjoint code, so it is an
//! independent oracle for [`Tape::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::{ParamId, ParamStore};
use super::{Result, Tape, Var};

/// Default perturbation for double-precision checks.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a small absolute floor so entries whose true
/// gradient is ~0 are judged on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of `loss_fn` against central differences for up
/// to `per_param` randomly chosen entries of every parameter.
pub fn check<F>(store: &ParamStore, loss_fn: F, per_param: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Var,
{
    let mut tape = Tape::with_params(store);
    let loss = loss_fn(&mut tape);
    let grads = tape.backward(loss)?;

    let eval = |s: &ParamStore| -> f64 {
        let mut t = Tape::inference(s);
        let l = loss_fn(&mut t);
        t.value(l).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_param).into_vec()
        };
        for j in picks {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[j]);
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(e);
                if e >= report.max_rel_err {
                    report.worst = format!(
                        "{}[{j}] analytic={analytic:.6e} numeric={numeric:.6e}",
                        store.name(id)
                    );
                }
            }
        }
    }
    Ok(report)
}
