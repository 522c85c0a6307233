use super::MetricsError;
use crate::motion::Vec3;
use crate::scene::Scene;

/// Default collision and contact tolerance in metres.
pub const TAU: f64 = 0.05;

/// Fraction of `(frame, joint)` queries whose signed distance to the scene
/// is at least `-tau`. Frame `f` of a dynamic scene is checked against the
/// interactor at frame `f`.
pub fn non_collision(joints: &[Vec<Vec3>], scene: &Scene, tau: f64) -> Result<f64, MetricsError> {
    let mut ok = 0usize;
    let mut total = 0usize;
    for (f, frame) in joints.iter().enumerate() {
        for &q in frame {
            let n = scene.nearest_at(f, q)?;
            total += 1;
            if n.signed >= -tau {
                ok += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::Empty("motion has no joints"));
    }
    Ok(ok as f64 / total as f64)
}

/// Whether any `(frame, joint)` lies within `tau` of the scene.
pub fn touches(joints: &[Vec<Vec3>], scene: &Scene, tau: f64) -> Result<bool, MetricsError> {
    for (f, frame) in joints.iter().enumerate() {
        for &q in frame {
            if scene.nearest_at(f, q)?.distance <= tau {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Fraction of sequences that touch the scene at least once.
pub fn contact(motions: &[Vec<Vec<Vec3>>], scene: &Scene, tau: f64) -> Result<f64, MetricsError> {
    if motions.is_empty() {
        return Err(MetricsError::Empty("no motions"));
    }
    let mut hits = 0;
    for m in motions {
        if touches(m, scene, tau)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / motions.len() as f64)
}
