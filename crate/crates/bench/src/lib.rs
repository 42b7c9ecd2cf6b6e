//! Synthetic data generators shared by the benchmark targets.

use echoxkit_core::matrix::Matrix;
use echoxkit_core::unitlm::{train_span_model, SpanModel};
use echoxkit_core::unitseq::UnitSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Corpus of motif-heavy unit sequences plus a span model trained on it.
pub fn motif_corpus(
    seed: u64,
    sequences: usize,
    motifs_per_sequence: usize,
    vocab: u32,
    max_span: usize,
) -> (Vec<UnitSequence>, SpanModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motifs: Vec<Vec<u32>> = (0..6)
        .map(|_| {
            let len = rng.random_range(2..=4usize);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        })
        .collect();
    let corpus: Vec<UnitSequence> = (0..sequences)
        .map(|_| {
            let mut units = Vec::new();
            for _ in 0..motifs_per_sequence {
                units.extend(&motifs[rng.random_range(0..motifs.len())]);
            }
            UnitSequence::new(units, vocab).expect("motif units are in-vocab")
        })
        .collect();
    let model = train_span_model(&corpus, max_span, 1.0).expect("non-empty corpus");
    (corpus, model)
}

/// Random frame matrix around a handful of well-separated centers.
pub fn clustered_frames(seed: u64, frames: usize, dim: usize, centers: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let c = &centroids[rng.random_range(0..centers)];
            c.iter().map(|&x| x + rng.random_range(-0.5..0.5)).collect()
        })
        .collect();
    Matrix::from_rows(&rows).expect("frames are non-empty")
}

/// Similarity series with occasional clear peaks.
pub fn peaky_series(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sims: Vec<f64> = (0..len).map(|_| rng.random_range(-0.2..0.09)).collect();
    let mut t = 0;
    while t + 8 < len {
        t += rng.random_range(5..30);
        if t < len {
            sims[t] = rng.random_range(0.3..0.9);
        }
    }
    sims
}
