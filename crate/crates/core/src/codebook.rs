//! K-means codebook training and frame quantization.
//!
//! Lloyd's algorithm with k-means++ seeding from an explicit seed. Runs are
//! fully deterministic: the only randomness is the seeded generator, the
//! nearest-centroid argmin breaks ties toward the lowest index, and empty
//! clusters are re-seeded with the point currently farthest from its
//! assigned centroid (lowest index on ties).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::unitseq::UnitSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Matrix,
    /// Seed the codebook was trained with; absent for codebooks loaded from
    /// disk (the binary format carries centroids only).
    seed: Option<u64>,
}

impl Codebook {
    pub fn from_centroids(centroids: Matrix, seed: Option<u64>) -> Result<Self> {
        centroids.ensure_finite("codebook centroids")?;
        if centroids.rows() == 0 {
            return Err(Error::InvalidInput("codebook needs at least one centroid".into()));
        }
        let cb = Self { centroids, seed };
        cb.check_distinct()?;
        Ok(cb)
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn check_distinct(&self) -> Result<()> {
        for i in 0..self.k() {
            for j in (i + 1)..self.k() {
                if squared_distance(self.centroids.row(i), self.centroids.row(j)) == 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "duplicate centroids at rows {i} and {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics from a training run.
#[derive(Debug, Clone)]
pub struct KMeansTrace {
    /// Inertia (sum of squared distances to assigned centroids) measured
    /// after each assignment step; non-increasing by construction.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn train_codebook(
    frames: &Matrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Codebook> {
    Ok(train_codebook_traced(frames, k, max_iters, seed)?.0)
}

pub fn train_codebook_traced(
    frames: &Matrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Codebook, KMeansTrace)> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    frames.ensure_finite("frames")?;
    let t = frames.rows();
    let dim = frames.cols();
    if t < k {
        return Err(Error::InsufficientData(format!("{t} frames for k={k} clusters")));
    }
    if count_distinct_rows(frames) < k {
        return Err(Error::InsufficientData(format!(
            "fewer than k={k} distinct frames"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(frames, k, &mut rng);

    let mut assignments = vec![usize::MAX; t];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;

        // Assignment step.
        let mut inertia = 0.0;
        let mut changed = false;
        for (i, row) in frames.iter_rows().enumerate() {
            let (c, d) = nearest(row, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        inertia_history.push(inertia);
        if !changed {
            converged = true;
            break;
        }

        // Update step: means of each cluster.
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, row) in frames.iter_rows().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, &x) in sums.row_mut(c).iter_mut().zip(row) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }

        // Re-seed empty clusters with the farthest point from its centroid.
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut taken = vec![false; t];
            for c in empties {
                let mut far = None;
                for (i, row) in frames.iter_rows().enumerate() {
                    if taken[i] {
                        continue;
                    }
                    let d = squared_distance(row, centroids.row(assignments[i]));
                    let better = match far {
                        None => true,
                        Some((_, best)) => d > best,
                    };
                    if better {
                        far = Some((i, d));
                    }
                }
                if let Some((i, _)) = far {
                    taken[i] = true;
                    centroids.row_mut(c).copy_from_slice(frames.row(i));
                }
            }
        }
    }

    let codebook = Codebook::from_centroids(centroids, Some(seed))?;
    Ok((codebook, KMeansTrace { inertia: inertia_history, iterations, converged }))
}

/// Quantizes each frame to its nearest centroid; ties break to the lowest
/// centroid index.
pub fn assign(frames: &Matrix, codebook: &Codebook) -> Result<UnitSequence> {
    if frames.cols() != codebook.dim() {
        return Err(Error::DimensionMismatch(format!(
            "frame dim {} vs centroid dim {}",
            frames.cols(),
            codebook.dim()
        )));
    }
    frames.ensure_finite("frames")?;
    let units = frames
        .iter_rows()
        .map(|row| nearest(row, codebook.centroids()).0 as u32)
        .collect();
    UnitSequence::new(units, codebook.k() as u32)
}

/// Sum of squared distances from each frame to its assigned centroid.
pub fn inertia(frames: &Matrix, codebook: &Codebook) -> Result<f64> {
    if frames.cols() != codebook.dim() {
        return Err(Error::DimensionMismatch(format!(
            "frame dim {} vs centroid dim {}",
            frames.cols(),
            codebook.dim()
        )));
    }
    Ok(frames
        .iter_rows()
        .map(|row| nearest(row, codebook.centroids()).1)
        .sum())
}

fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let d = squared_distance(row, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn count_distinct_rows(frames: &Matrix) -> usize {
    use std::collections::HashSet;
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in frames.iter_rows() {
        seen.insert(row.iter().map(|x| x.to_bits()).collect());
    }
    seen.len()
}

fn plus_plus_init<R: Rng>(frames: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let t = frames.rows();
    let mut centroids = Matrix::zeros(k, frames.cols());
    let first = rng.random_range(0..t);
    centroids.row_mut(0).copy_from_slice(frames.row(first));

    let mut min_d: Vec<f64> = frames
        .iter_rows()
        .map(|row| squared_distance(row, centroids.row(0)))
        .collect();

    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        // total > 0 is guaranteed by the distinct-rows precondition.
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &w) in min_d.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            acc += w;
            if acc >= target {
                chosen = Some(i);
                break;
            }
        }
        // Floating accumulation may land past the last positive weight.
        let chosen = chosen.unwrap_or_else(|| {
            min_d
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("at least one frame remains unchosen")
        });
        centroids.row_mut(c).copy_from_slice(frames.row(chosen));
        for (i, row) in frames.iter_rows().enumerate() {
            let d = squared_distance(row, centroids.row(c));
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    centroids
}
