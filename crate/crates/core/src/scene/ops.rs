use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::dist2;
use super::{PointCloud, SceneError};
use crate::motion::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    Fps,
    Random,
}

/// Keeps points within horizontal distance `radius` of `anchor` (inclusive)
/// and translates them so the anchor lands on the origin. The anchor's z is
/// its ground height, so vertical coordinates become heights above it.
pub fn crop_and_normalize(cloud: &PointCloud, anchor: Vec3, radius: f64) -> Result<PointCloud, SceneError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(SceneError::Invalid(format!("crop radius must be positive, got {radius}")));
    }
    let r2 = radius * radius;
    let keep: Vec<usize> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let (dx, dy) = (p[0] - anchor[0], p[1] - anchor[1]);
            dx * dx + dy * dy <= r2
        })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(SceneError::EmptyCrop { anchor, radius });
    }
    Ok(cloud.subset(&keep).translated([-anchor[0], -anchor[1], -anchor[2]]))
}

/// Greedy farthest point sampling from index 0. Each pick maximizes the
/// distance to the chosen set; ties go to the lower index.
pub fn farthest_point_sample(points: &[Vec3], n: usize) -> Vec<usize> {
    let n = n.min(points.len());
    if n == 0 {
        return Vec::new();
    }
    let mut picked = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut cur = 0;
    for _ in 0..n {
        picked.push(cur);
        let c = points[cur];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        cur = best.1;
    }
    picked
}

/// Seeded uniform subset, returned in ascending index order.
pub fn random_subset(total: usize, n: usize, seed: u64) -> Vec<usize> {
    let n = n.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Reduces a cloud to `min(N, n_p)` of its points. Clouds already within
/// budget are returned unchanged.
pub fn downsample(cloud: &PointCloud, n_p: usize, method: Downsample, seed: u64) -> Result<PointCloud, SceneError> {
    if cloud.is_empty() {
        return Err(SceneError::EmptyCloud);
    }
    if n_p == 0 {
        return Err(SceneError::Invalid("downsample target must be at least 1".into()));
    }
    if cloud.len() <= n_p {
        return Ok(cloud.clone());
    }
    let idx = match method {
        Downsample::Fps => farthest_point_sample(cloud.points(), n_p),
        Downsample::Random => random_subset(cloud.len(), n_p, seed),
    };
    Ok(cloud.subset(&idx))
}
