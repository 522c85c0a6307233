use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::motion::{Decoded, FeatureLayout};
use crate::tensor::Tensor;

/// What a pairwise distance is measured over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApdMode {
    /// Root translation per frame.
    Translation,
    /// Feature columns after the root block, one vector per frame.
    Pose,
    /// Every joint of every frame.
    Markers,
}

impl ApdMode {
    /// Splits one sample into the units whose Euclidean distances are
    /// averaged.
    pub fn units(self, features: &Tensor, decoded: &Decoded) -> Vec<Vec<f64>> {
        match self {
            ApdMode::Translation => decoded.root.iter().map(|p| p.to_vec()).collect(),
            ApdMode::Pose => (0..features.rows())
                .map(|r| features.row_slice(r)[FeatureLayout::LOCAL..].to_vec())
                .collect(),
            ApdMode::Markers => decoded.joints.iter().flatten().map(|p| p.to_vec()).collect(),
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance between corresponding units.
pub fn sample_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "unit count");
    a.iter().zip(b).map(|(x, y)| euclid(x, y)).sum::<f64>() / a.len() as f64
}

/// APD and spread for the `K` samples of one condition.
///
/// APD averages the distance over all unordered pairs. The spread is the
/// root mean square of each sample's distance to the unit-wise mean sample.
pub fn apd_std(samples: &[Vec<Vec<f64>>]) -> Result<(f64, f64), MetricsError> {
    let k = samples.len();
    if k < 2 {
        return Err(MetricsError::TooFew { need: 2, got: k });
    }
    let units = samples[0].len();
    if units == 0 || samples.iter().any(|s| s.len() != units) {
        return Err(MetricsError::Shape("samples must have the same nonzero unit count".into()));
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += sample_distance(&samples[i], &samples[j]);
        }
    }
    let apd = 2.0 * sum / (k * (k - 1)) as f64;
    let mean: Vec<Vec<f64>> = (0..units)
        .map(|u| {
            let w = samples[0][u].len();
            (0..w).map(|c| samples.iter().map(|s| s[u][c]).sum::<f64>() / k as f64).collect()
        })
        .collect();
    let ms = samples
        .iter()
        .map(|s| sample_distance(s, &mean).powi(2))
        .sum::<f64>()
        / k as f64;
    Ok((apd, ms.sqrt()))
}

/// Mean of the per-condition APD and spread.
pub fn dataset_apd_std(conditions: &[Vec<Vec<Vec<f64>>>]) -> Result<(f64, f64), MetricsError> {
    if conditions.is_empty() {
        return Err(MetricsError::Empty("no conditions"));
    }
    let mut a = 0.0;
    let mut s = 0.0;
    for c in conditions {
        let (x, y) = apd_std(c)?;
        a += x;
        s += y;
    }
    let n = conditions.len() as f64;
    Ok((a / n, s / n))
}
