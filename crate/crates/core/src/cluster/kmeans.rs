use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check_dimensions;
use crate::error::{PsaError, Result};
use crate::model::EmbeddingVector;
use crate::scalar::{squared_distance, Scalar};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub centroids: Vec<EmbeddingVector<T>>,
    /// Centroid index per point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: T,
    /// Inertia after each centroid update, in iteration order.
    pub inertia_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> KMeansResult<T> {
    /// Point indices per centroid. A centroid can end up with no members
    /// only when the input has fewer distinct points than `m`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Lloyd's k-means with k-means++ seeding, run until the assignment stops
/// changing or [`MAX_LLOYD_ITERATIONS`] is reached.
pub fn kmeans<T: Scalar>(points: &[EmbeddingVector<T>], m: usize, seed: u64) -> Result<KMeansResult<T>> {
    if points.is_empty() {
        return Err(PsaError::EmptyInput("kmeans points"));
    }
    if m == 0 {
        return Err(PsaError::InvalidArgument("kmeans needs at least one cluster".into()));
    }
    if m > points.len() {
        return Err(PsaError::TooManyClusters {
            clusters: m,
            points: points.len(),
        });
    }
    let dim = check_dimensions(points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, m, &mut rng);

    let n = points.len();
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        let changed = assign(points, &centroids, &mut assignment);
        if !changed {
            converged = true;
            break;
        }
        iterations += 1;
        update_centroids(points, &mut centroids, &mut assignment, dim);
        history.push(inertia(points, &centroids, &assignment));
    }

    let inertia = inertia(points, &centroids, &assignment);
    Ok(KMeansResult {
        centroids: centroids.into_iter().map(EmbeddingVector::from_raw).collect(),
        assignment,
        inertia,
        inertia_history: history,
        iterations,
        converged,
    })
}

fn plus_plus_init<T: Scalar>(points: &[EmbeddingVector<T>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let first = rng.random_range(0..n);
    let mut centroids = vec![points[first].as_slice().to_vec()];
    let mut weight: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_slice(), &centroids[0]).to_f64_lossy())
        .collect();

    while centroids.len() < m {
        let total: f64 = weight.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in weight.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total weight")
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_slice().to_vec();
        for (w, p) in weight.iter_mut().zip(points) {
            *w = w.min(squared_distance(p.as_slice(), &c).to_f64_lossy());
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest-centroid assignment, ties to the lowest centroid index. Returns
/// whether any label changed.
fn assign<T: Scalar>(points: &[EmbeddingVector<T>], centroids: &[Vec<T>], assignment: &mut [usize]) -> bool {
    let mut changed = false;
    for (p, slot) in points.iter().zip(assignment.iter_mut()) {
        let mut best = (T::infinity(), 0);
        for (c, centroid) in centroids.iter().enumerate() {
            let d = squared_distance(p.as_slice(), centroid);
            if d < best.0 {
                best = (d, c);
            }
        }
        if *slot != best.1 {
            *slot = best.1;
            changed = true;
        }
    }
    changed
}

/// Moves each centroid to its members' mean. An emptied centroid is
/// re-seeded at the point farthest from its own centroid (lowest index on
/// ties), provided that distance is positive.
fn update_centroids<T: Scalar>(
    points: &[EmbeddingVector<T>],
    centroids: &mut [Vec<T>],
    assignment: &mut [usize],
    dim: usize,
) {
    let m = centroids.len();
    loop {
        let mut sums = vec![vec![T::zero(); dim]; m];
        let mut counts = vec![0usize; m];
        for (p, &c) in points.iter().zip(assignment.iter()) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.as_slice()) {
                *s = *s + *v;
            }
        }
        for c in 0..m {
            if counts[c] > 0 {
                let k = T::from_count(counts[c]);
                centroids[c] = sums[c].iter().map(|s| *s / k).collect();
            }
        }

        let Some(empty) = (0..m).find(|&c| counts[c] == 0) else {
            return;
        };
        let mut far = (T::zero(), usize::MAX);
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let d = squared_distance(p.as_slice(), &centroids[assignment[i]]);
            if d > far.0 {
                far = (d, i);
            }
        }
        if far.1 == usize::MAX {
            return;
        }
        assignment[far.1] = empty;
        centroids[empty] = points[far.1].as_slice().to_vec();
    }
}

fn inertia<T: Scalar>(points: &[EmbeddingVector<T>], centroids: &[Vec<T>], assignment: &[usize]) -> T {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| squared_distance(p.as_slice(), &centroids[c]))
        .sum()
}
