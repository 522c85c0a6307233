use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MetricsError;

pub const DEFAULT_POOL: usize = 32;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top-1 retrieval accuracy of each motion's own caption against
/// `pool − 1` seeded distractors with distinct caption text. Embeddings are
/// expected unit-norm, so the dot product is the cosine. A distractor that
/// ties the true caption counts as a miss.
pub fn r_score(
    motion: &[Vec<f64>],
    text: &[Vec<f64>],
    captions: &[String],
    pool: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    let n = motion.len();
    if text.len() != n || captions.len() != n {
        return Err(MetricsError::Shape("motion, text and caption counts differ".into()));
    }
    if pool < 2 {
        return Err(MetricsError::Shape("pool needs at least two entries".into()));
    }
    if n < pool {
        return Err(MetricsError::TooFew { need: pool, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut hits = 0;
    for i in 0..n {
        order.shuffle(&mut rng);
        // Walking a fresh shuffle and skipping repeats is the same as
        // redrawing any duplicate caption.
        let mut seen: Vec<&str> = vec![&captions[i]];
        let mut distractors = Vec::with_capacity(pool - 1);
        for &j in &order {
            if distractors.len() == pool - 1 {
                break;
            }
            if j != i && !seen.contains(&captions[j].as_str()) {
                seen.push(&captions[j]);
                distractors.push(j);
            }
        }
        if distractors.len() < pool - 1 {
            return Err(MetricsError::TooFew {
                need: pool,
                got: seen.len(),
            });
        }
        let own = dot(&motion[i], &text[i]);
        if distractors.iter().all(|&j| dot(&motion[i], &text[j]) < own) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
