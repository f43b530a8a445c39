//! Query and respond: score every query prototype against an image
//! embedding, keep the top k, and blend their linked responses with softmax
//! weights over the raw cosine similarities.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{PsaError, Result};
use crate::model::EmbeddingVector;
use crate::scalar::{dot, Scalar};
use crate::space::PrototypeSpace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<T> {
    /// Position in [`PrototypeSpace::prototypes`].
    pub index: usize,
    pub label_index: usize,
    pub sub_index: usize,
    pub similarity: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selected<T> {
    pub candidate: Candidate<T>,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResponse<T> {
    /// In descending similarity order.
    pub selected: Vec<Selected<T>>,
    pub response: EmbeddingVector<T>,
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(PsaError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(PsaError::ZeroVector);
    }
    Ok(clamp_unit(a.dot(b) / (na * nb)))
}

fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

fn check_query<T: Scalar>(space: &PrototypeSpace<T>, q_star: &EmbeddingVector<T>, k: usize) -> Result<T> {
    if k == 0 || k > space.len() {
        return Err(PsaError::TopKOutOfRange { k, max: space.len() });
    }
    if q_star.dim() != space.dimension() {
        return Err(PsaError::DimensionMismatch {
            expected: space.dimension(),
            actual: q_star.dim(),
        });
    }
    let norm = q_star.norm();
    if norm == T::zero() {
        return Err(PsaError::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(PsaError::NonFinite { index: 0 });
    }
    Ok(norm)
}

/// Descending similarity; equal similarities keep `(label, sub)` order,
/// which is the space's storage order.
fn rank<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// The `k` prototypes most cosine-similar to `q_star`, best first.
pub fn top_k<T: Scalar>(space: &PrototypeSpace<T>, q_star: &EmbeddingVector<T>, k: usize) -> Result<Vec<Candidate<T>>> {
    let q_norm = check_query(space, q_star, k)?;
    let q = q_star.as_slice();
    let mut scored: Vec<(T, usize)> = space
        .prototypes()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = dot(q, p.query.as_slice()) / (q_norm * space.query_norm(i));
            (clamp_unit(s), i)
        })
        .collect();

    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank);

    let protos = space.prototypes();
    Ok(scored
        .into_iter()
        .map(|(similarity, index)| Candidate {
            index,
            label_index: protos[index].label_index,
            sub_index: protos[index].sub_index,
            similarity,
        })
        .collect())
}

/// `exp(s_i) / Σ exp(s_j)`, evaluated with the maximum subtracted first.
pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|s| (*s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn respond<T: Scalar>(space: &PrototypeSpace<T>, q_star: &EmbeddingVector<T>, k: usize) -> Result<QueryResponse<T>> {
    let candidates = top_k(space, q_star, k)?;
    let sims: Vec<T> = candidates.iter().map(|c| c.similarity).collect();
    let weights = softmax(&sims);

    let mut response = vec![T::zero(); space.dimension()];
    for (c, w) in candidates.iter().zip(&weights) {
        let r = space.prototypes()[c.index].response.as_slice();
        for (acc, x) in response.iter_mut().zip(r) {
            *acc = *acc + *w * *x;
        }
    }
    Ok(QueryResponse {
        selected: candidates
            .into_iter()
            .zip(weights)
            .map(|(candidate, weight)| Selected { candidate, weight })
            .collect(),
        response: EmbeddingVector::from_raw(response),
    })
}

/// [`respond`] for many queries. Each result depends only on its own query.
pub fn respond_batch<T: Scalar>(
    space: &PrototypeSpace<T>,
    queries: &[EmbeddingVector<T>],
    k: usize,
) -> Vec<Result<QueryResponse<T>>> {
    queries.par_iter().map(|q| respond(space, q, k)).collect()
}
