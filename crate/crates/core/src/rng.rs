//! Seed handling. Every stochastic routine takes one root seed; item `k`
//! (an episode, a sampled history, a sequence) draws from the ChaCha8
//! stream `k` of the generator seeded with the root. Streams are
//! independent of each other and of evaluation order, so parallel and
//! sequential runs produce identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(root: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng
}

/// Samples an index from unnormalized non-negative weights. Falls back to
/// the last positive entry when rounding leaves the draw past the end.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples from a sparse `(item, probability)` list.
pub fn sample_sparse<R: Rng + ?Sized>(rng: &mut R, dist: &[(usize, f64)]) -> usize {
    let weights: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
    dist[sample_index(rng, &weights)].0
}
