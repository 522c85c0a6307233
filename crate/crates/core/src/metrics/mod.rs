//! Physical plausibility, diversity, distribution and retrieval metrics.

mod diversity;
mod frechet;
mod matching;
mod plausibility;
mod rscore;

pub use diversity::{apd_std, dataset_apd_std, sample_distance, ApdMode};
pub use frechet::{fid, frechet_distance, gaussian_moments, SHRINK};
pub use matching::{in_batch_accuracy, train_matching_model, MatchingConfig, MatchingModel, EMBED_DIM};
pub use plausibility::{contact, non_collision, touches, TAU};
pub use rscore::{r_score, DEFAULT_POOL};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::SceneError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("covariance is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// One evaluation run. Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub non_collision: f64,
    pub contact: f64,
    pub apd_t: f64,
    pub std_t: f64,
    pub apd_p: f64,
    pub std_p: f64,
    pub apd_m: f64,
    pub std_m: f64,
    pub fid: f64,
    pub r_score: f64,
    pub n_conditions: usize,
    pub k_per_condition: usize,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn in_range(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        unit(self.non_collision)
            && unit(self.contact)
            && unit(self.r_score)
            && [self.apd_t, self.std_t, self.apd_p, self.std_p, self.apd_m, self.std_m, self.fid]
                .into_iter()
                .all(nonneg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_key_order_and_round_trip() {
        let r = MetricsReport {
            non_collision: 0.9,
            contact: 1.0,
            apd_t: 0.1,
            std_t: 0.05,
            apd_p: 0.3,
            std_p: 0.2,
            apd_m: 0.12,
            std_m: 0.07,
            fid: 3.25,
            r_score: 0.4,
            n_conditions: 12,
            k_per_condition: 3,
            config_hash: "deadbeef".into(),
        };
        let s = r.to_json();
        let keys: Vec<usize> = [
            "non_collision",
            "contact",
            "apd_t",
            "std_t",
            "apd_p",
            "std_p",
            "apd_m",
            "std_m",
            "fid",
            "r_score",
            "n_conditions",
            "k_per_condition",
            "config_hash",
        ]
        .iter()
        .map(|k| s.find(&format!("\"{k}\"")).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(MetricsReport::from_json(&s).unwrap(), r);
        assert!(r.in_range());
    }
}
