//! Clustering primitives behind prototype-space construction: HDBSCAN for
//! surrogate labels, k-means for sub-clusters and medoid selection.
//!
//! All three use Euclidean distance and are deterministic for fixed input
//! order (and seed, for k-means).

mod hdbscan;
mod kmeans;

pub use hdbscan::hdbscan;
pub use kmeans::{kmeans, KMeansResult, MAX_LLOYD_ITERATIONS};

use crate::error::{PsaError, Result};
use crate::model::EmbeddingVector;
use crate::scalar::{squared_distance, Scalar};

/// Label value for points that belong to no cluster.
pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// One label per input point; non-noise labels are `0..num_clusters`.
    pub labels: Vec<i32>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![NOISE; n],
            num_clusters: 0,
        }
    }

    /// Point indices of each cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &label) in self.labels.iter().enumerate() {
            if label >= 0 {
                out[label as usize].push(i);
            }
        }
        out
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

pub(crate) fn check_dimensions<T: Scalar>(points: &[EmbeddingVector<T>]) -> Result<usize> {
    let dim = points.first().map(EmbeddingVector::dim).unwrap_or(0);
    if dim == 0 {
        return Err(PsaError::EmptyEmbedding);
    }
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(PsaError::DimensionMismatch {
            expected: dim,
            actual: p.dim(),
        });
    }
    Ok(dim)
}

/// Coordinate-wise mean of the selected points.
pub(crate) fn centroid<T: Scalar>(points: &[EmbeddingVector<T>], members: &[usize]) -> Vec<T> {
    let dim = points[members[0]].dim();
    let mut sum = vec![T::zero(); dim];
    for &i in members {
        for (s, v) in sum.iter_mut().zip(points[i].as_slice()) {
            *s = *s + *v;
        }
    }
    let count = T::from_count(members.len());
    sum.iter_mut().for_each(|s| *s = *s / count);
    sum
}

/// Returns the member (as an index into `points`) closest to the members'
/// centroid; ties go to the lowest index.
pub fn medoid<T: Scalar>(points: &[EmbeddingVector<T>], member_indices: &[usize]) -> Result<usize> {
    if member_indices.is_empty() {
        return Err(PsaError::EmptyInput("medoid membership"));
    }
    if let Some(&bad) = member_indices.iter().find(|&&i| i >= points.len()) {
        return Err(PsaError::InvalidArgument(format!(
            "member index {bad} out of range for {} points",
            points.len()
        )));
    }
    let center = centroid(points, member_indices);
    let mut best = (T::infinity(), usize::MAX);
    for &i in member_indices {
        let d = squared_distance(points[i].as_slice(), &center);
        if d < best.0 || (d == best.0 && i < best.1) {
            best = (d, i);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[[f64; 2]]) -> Vec<EmbeddingVector<f64>> {
        raw.iter()
            .map(|p| EmbeddingVector::new(p.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn medoid_of_right_triangle_is_the_corner() {
        // distances to (1/3, 1/3): 0.471 for the corner, 0.745 for the others
        let p = pts(&[[0., 0.], [1., 0.], [0., 1.]]);
        assert_eq!(medoid(&p, &[0, 1, 2]).unwrap(), 0);
    }

    #[test]
    fn medoid_of_singleton() {
        let p = pts(&[[0., 0.], [5., 5.]]);
        assert_eq!(medoid(&p, &[1]).unwrap(), 1);
    }

    #[test]
    fn medoid_symmetric_tie_goes_to_lowest_index() {
        let p = pts(&[[9., 9.], [1., 0.], [-1., 0.]]);
        assert_eq!(medoid(&p, &[2, 1]).unwrap(), 1);
    }

    #[test]
    fn medoid_of_empty_membership_errors() {
        let p = pts(&[[0., 0.]]);
        assert!(medoid(&p, &[]).is_err());
        assert!(medoid(&p, &[3]).is_err());
    }

    #[test]
    fn members_groups_by_label() {
        let a = ClusterAssignment {
            labels: vec![1, NOISE, 0, 1],
            num_clusters: 2,
        };
        assert_eq!(a.members(), vec![vec![2], vec![0, 3]]);
        assert_eq!(a.noise_count(), 1);
    }
}
