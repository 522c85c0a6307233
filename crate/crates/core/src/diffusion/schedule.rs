use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::tensor::Tensor;

/// Parameters a schedule is rebuilt from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Per-step noise tables, indexed from `t = 1`. Index 0 holds the
/// noise-free convention `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    /// `1 − ᾱ_t`, accumulated directly so that `1 − ᾱ_1 = β_1` exactly.
    one_minus: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` to `beta_end` over `steps` steps.
    pub fn build(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::Schedule("need at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self, DiffusionError> {
        Self::build(spec.steps, spec.beta_start, spec.beta_end)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::Schedule("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bars = vec![1.0];
        let mut one_minus = vec![0.0];
        for &b in &betas {
            let ab = *alpha_bars.last().unwrap();
            one_minus.push(one_minus.last().unwrap() + ab * b);
            alpha_bars.push(ab * (1.0 - b));
        }
        Ok(Self {
            betas,
            alpha_bars,
            one_minus,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus[t]
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`. `t = 0` returns `x0`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor, DiffusionError> {
        if t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        if x0.shape() != eps.shape() {
            return Err(DiffusionError::Shape(format!("x0 {:?} vs noise {:?}", x0.shape(), eps.shape())));
        }
        let (a, b) = (self.alpha_bars[t].sqrt(), self.one_minus[t].sqrt());
        let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
        Ok(Tensor::new(x0.shape().to_vec(), data).expect("same shape"))
    }

    /// Posterior `q(x_{t−1} | x_t, x0)` as `(coef_x0, coef_xt, variance)`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64), DiffusionError> {
        self.check(t)?;
        let (ab_prev, om_prev, om) = (self.alpha_bars[t - 1], self.one_minus[t - 1], self.one_minus[t]);
        let beta = self.beta(t);
        let c0 = ab_prev.sqrt() * beta / om;
        let ct = self.alpha(t).sqrt() * om_prev / om;
        Ok((c0, ct, beta * om_prev / om))
    }

    /// One reverse step from `x_t` given the predicted clean motion. `noise`
    /// is ignored at `t = 1`, where the result is exactly `x0_hat`.
    pub fn p_sample_step(
        &self,
        x_t: &Tensor,
        x0_hat: &Tensor,
        t: usize,
        noise: Option<&Tensor>,
    ) -> Result<Tensor, DiffusionError> {
        let (c0, ct, var) = self.posterior(t)?;
        if x_t.shape() != x0_hat.shape() {
            return Err(DiffusionError::Shape(format!("x_t {:?} vs x0 {:?}", x_t.shape(), x0_hat.shape())));
        }
        if t == 1 {
            return Ok(x0_hat.clone());
        }
        let sd = var.sqrt();
        let mut out: Vec<f64> = x0_hat.data().iter().zip(x_t.data()).map(|(a, b)| c0 * a + ct * b).collect();
        if let Some(z) = noise {
            if z.shape() != x_t.shape() {
                return Err(DiffusionError::Shape(format!("noise {:?} vs x_t {:?}", z.shape(), x_t.shape())));
            }
            for (o, e) in out.iter_mut().zip(z.data()) {
                *o += sd * e;
            }
        }
        Ok(Tensor::new(x_t.shape().to_vec(), out).expect("same shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_schedules() {
        let s = NoiseSchedule::build(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        let s = NoiseSchedule::build(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::build(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::build(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::build(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::build(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn q_sample_substitution() {
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        assert_eq!(s.alpha_bar(1), 0.25);
        let x = s
            .q_sample(&Tensor::row(vec![2.0, 0.0]), 1, &Tensor::row(vec![0.0, 1.0]))
            .unwrap();
        assert_eq!(x.data(), &[1.0, 0.75f64.sqrt()]);
        let x0 = Tensor::row(vec![3.0, -1.0]);
        assert_eq!(s.q_sample(&x0, 0, &Tensor::row(vec![5.0, 5.0])).unwrap(), x0);
        assert!(s.q_sample(&x0, 2, &x0).is_err());
    }

    #[test]
    fn last_step_returns_prediction() {
        let s = NoiseSchedule::build(100, 1e-4, 0.02).unwrap();
        assert_eq!(s.one_minus_alpha_bar(1), s.beta(1));
        let (c0, ct, var) = s.posterior(1).unwrap();
        assert_eq!((c0, ct, var), (1.0, 0.0, 0.0));
        let xt = Tensor::row(vec![0.3, -2.0, 7.0]);
        let x0 = Tensor::row(vec![0.1, 0.2, -0.3]);
        let noise = Tensor::row(vec![9.0; 3]);
        assert_eq!(s.p_sample_step(&xt, &x0, 1, Some(&noise)).unwrap(), x0);
        assert!(s.p_sample_step(&xt, &x0, 0, None).is_err());
        assert!(s.p_sample_step(&xt, &x0, 101, None).is_err());
    }
}
