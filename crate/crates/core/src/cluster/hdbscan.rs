use rayon::prelude::*;

use super::{check_dimensions, ClusterAssignment, NOISE};
use crate::error::{PsaError, Result};
use crate::model::EmbeddingVector;
use crate::scalar::{squared_distance_lanes as squared_distance, Scalar};

/// Below this many candidates the inner loops stay sequential.
const PAR_MIN_LEN: usize = 2048;

/// HDBSCAN with excess-of-mass cluster selection.
///
/// Core distances use `k = min_cluster_size` neighbours, counting the point
/// itself. The minimum spanning tree of the mutual-reachability graph is
/// built with Prim's algorithm over exact pairwise distances; equal-weight
/// candidates resolve to the lowest point index.
///
/// The root of the condensed tree is never selected, except when it has no
/// child clusters at all: then the data has a single density mode and every
/// point is assigned to cluster 0.
///
/// Fewer than `min_cluster_size` points yields an all-noise assignment.
pub fn hdbscan<T: Scalar>(
    points: &[EmbeddingVector<T>],
    min_cluster_size: usize,
) -> Result<ClusterAssignment> {
    if points.is_empty() {
        return Err(PsaError::EmptyInput("hdbscan points"));
    }
    if min_cluster_size < 2 {
        return Err(PsaError::InvalidArgument(format!(
            "min_cluster_size = {min_cluster_size} must be at least 2"
        )));
    }
    let dim = check_dimensions(points)?;
    let n = points.len();
    if n < min_cluster_size {
        return Ok(ClusterAssignment::all_noise(n));
    }

    let data: Vec<T> = points.iter().flat_map(|p| p.as_slice().iter().copied()).collect();
    let core_sq = core_distances_sq(&data, dim, min_cluster_size);
    let mst = prim_mst(&data, dim, &core_sq);
    let merges = single_linkage(n, mst);
    let tree = CondensedTree::build(&merges, n, min_cluster_size);
    Ok(tree.extract_eom())
}

fn row<T>(data: &[T], dim: usize, i: usize) -> &[T] {
    &data[i * dim..(i + 1) * dim]
}

/// Squared distance from each point to its k-th nearest neighbour (itself
/// included as the first).
fn core_distances_sq<T: Scalar>(data: &[T], dim: usize, k: usize) -> Vec<T> {
    let n = data.len() / dim;
    (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map_init(
            || Vec::with_capacity(k + 1),
            |nearest: &mut Vec<T>, i| {
                let p = row(data, dim, i);
                // ascending; holds the k smallest distances seen so far
                nearest.clear();
                for q in data.chunks_exact(dim) {
                    let d = squared_distance(p, q);
                    if nearest.len() < k {
                        let at = nearest.partition_point(|x| *x <= d);
                        nearest.insert(at, d);
                    } else if d < nearest[k - 1] {
                        let at = nearest.partition_point(|x| *x <= d);
                        nearest.insert(at, d);
                        nearest.pop();
                    }
                }
                nearest[k - 1]
            },
        )
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Edge<T> {
    a: usize,
    b: usize,
    weight: T,
}

/// Lowest `(weight, vertex)` pair; `(weight, vertex, position)`.
fn better<T: Scalar>(x: (T, usize, usize), y: (T, usize, usize)) -> (T, usize, usize) {
    if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) {
        y
    } else {
        x
    }
}

/// Unvisited vertices with their coordinates and core distances packed
/// contiguously. Removal swaps the last entry into the hole.
struct Frontier<T> {
    dim: usize,
    vertex: Vec<usize>,
    rows: Vec<T>,
    core_sq: Vec<T>,
    best: Vec<T>,
    from: Vec<usize>,
}

impl<T: Scalar> Frontier<T> {
    fn remove(&mut self, pos: usize) {
        let last = self.vertex.len() - 1;
        if pos != last {
            let (head, tail) = self.rows.split_at_mut(last * self.dim);
            head[pos * self.dim..(pos + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.rows.truncate(last * self.dim);
        self.vertex.swap_remove(pos);
        self.core_sq.swap_remove(pos);
        self.best.swap_remove(pos);
        self.from.swap_remove(pos);
    }

    /// Relaxes positions `offset..` of the given slices against `current`
    /// and returns the best remaining candidate among them.
    #[allow(clippy::too_many_arguments)]
    fn relax_span(
        dim: usize,
        cur_row: &[T],
        cur_core: T,
        current: usize,
        offset: usize,
        vertex: &[usize],
        rows: &[T],
        core_sq: &[T],
        best: &mut [T],
        from: &mut [usize],
    ) -> (T, usize, usize) {
        let mut acc = (T::infinity(), usize::MAX, usize::MAX);
        for (p, q) in rows.chunks_exact(dim).enumerate() {
            let mr = squared_distance(cur_row, q).max(cur_core).max(core_sq[p]);
            if mr < best[p] {
                best[p] = mr;
                from[p] = current;
            }
            acc = better(acc, (best[p], vertex[p], offset + p));
        }
        acc
    }
}

/// Prim's algorithm on the dense mutual-reachability graph, starting from
/// point 0. Weights are Euclidean (not squared).
fn prim_mst<T: Scalar>(data: &[T], dim: usize, core_sq: &[T]) -> Vec<Edge<T>> {
    let n = core_sq.len();
    let mut f = Frontier {
        dim,
        vertex: (1..n).collect(),
        rows: data[dim..].to_vec(),
        core_sq: core_sq[1..].to_vec(),
        best: vec![T::infinity(); n - 1],
        from: vec![0; n - 1],
    };
    let parallel = rayon::current_num_threads() > 1;
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    let mut cur_row = row(data, dim, 0).to_vec();

    while !f.vertex.is_empty() {
        let cur_core = core_sq[current];
        let len = f.vertex.len();
        let (weight_sq, next, pos) = if parallel && len >= PAR_MIN_LEN {
            let chunk = PAR_MIN_LEN / 2;
            f.rows
                .par_chunks(chunk * dim)
                .zip(f.best.par_chunks_mut(chunk))
                .zip(f.from.par_chunks_mut(chunk))
                .enumerate()
                .map(|(c, ((rows, best), from))| {
                    let lo = c * chunk;
                    let hi = lo + best.len();
                    Frontier::relax_span(
                        dim,
                        &cur_row,
                        cur_core,
                        current,
                        lo,
                        &f.vertex[lo..hi],
                        rows,
                        &f.core_sq[lo..hi],
                        best,
                        from,
                    )
                })
                .reduce(|| (T::infinity(), usize::MAX, usize::MAX), better)
        } else {
            Frontier::relax_span(
                dim,
                &cur_row,
                cur_core,
                current,
                0,
                &f.vertex,
                &f.rows,
                &f.core_sq,
                &mut f.best,
                &mut f.from,
            )
        };

        edges.push(Edge {
            a: f.from[pos],
            b: next,
            weight: weight_sq.sqrt(),
        });
        cur_row.copy_from_slice(&f.rows[pos * dim..(pos + 1) * dim]);
        f.remove(pos);
        current = next;
    }
    edges
}

#[derive(Debug, Clone, Copy)]
struct Merge<T> {
    left: usize,
    right: usize,
    distance: T,
    size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        let total = 2 * n - 1;
        Self {
            parent: (0..total).collect(),
            size: (0..total).map(|i| usize::from(i < n)).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }
}

/// Single-linkage dendrogram from MST edges. Node `n + i` is created by
/// merge `i`; the root is node `2n - 2`.
fn single_linkage<T: Scalar>(n: usize, mut mst: Vec<Edge<T>>) -> Vec<Merge<T>> {
    mst.sort_by(|x, y| x.weight.partial_cmp(&y.weight).expect("finite"));
    let mut uf = UnionFind::new(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (i, e) in mst.into_iter().enumerate() {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        let node = n + i;
        let size = uf.size[ra] + uf.size[rb];
        uf.parent[ra] = node;
        uf.parent[rb] = node;
        uf.size[node] = size;
        merges.push(Merge {
            left: ra,
            right: rb,
            distance: e.weight,
            size,
        });
    }
    merges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Child {
    Point(usize),
    Cluster(usize),
}

#[derive(Debug, Clone, Copy)]
struct CondensedRow<T> {
    parent: usize,
    child: Child,
    lambda: T,
    size: usize,
}

/// Condensed cluster tree. Cluster 0 is the root; every child cluster has a
/// larger id than its parent.
struct CondensedTree<T> {
    rows: Vec<CondensedRow<T>>,
    num_points: usize,
    num_clusters: usize,
}

impl<T: Scalar> CondensedTree<T> {
    fn build(merges: &[Merge<T>], n: usize, min_cluster_size: usize) -> Self {
        let size_of = |node: usize| if node < n { 1 } else { merges[node - n].size };
        let leaves_of = |node: usize, out: &mut Vec<usize>| {
            let mut stack = vec![node];
            while let Some(x) = stack.pop() {
                if x < n {
                    out.push(x);
                } else {
                    let m = &merges[x - n];
                    stack.push(m.right);
                    stack.push(m.left);
                }
            }
        };

        let root = 2 * n - 2;
        let mut relabel = vec![usize::MAX; 2 * n - 1];
        relabel[root] = 0;
        let mut next_cluster = 1;
        let mut rows = Vec::new();
        let mut leaves = Vec::new();

        if n == 1 {
            rows.push(CondensedRow {
                parent: 0,
                child: Child::Point(0),
                lambda: T::infinity(),
                size: 1,
            });
        }

        // Breadth-first over internal nodes that still belong to some cluster.
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(node) = queue.pop_front() {
            if node < n {
                continue;
            }
            let m = merges[node - n];
            let parent = relabel[node];
            let lambda = if m.distance > T::zero() {
                T::one() / m.distance
            } else {
                T::infinity()
            };
            let (ls, rs) = (size_of(m.left), size_of(m.right));
            let big = (ls >= min_cluster_size, rs >= min_cluster_size);

            for (child, child_size, child_big, other_big) in
                [(m.left, ls, big.0, big.1), (m.right, rs, big.1, big.0)]
            {
                if child_big && other_big {
                    relabel[child] = next_cluster;
                    rows.push(CondensedRow {
                        parent,
                        child: Child::Cluster(next_cluster),
                        lambda,
                        size: child_size,
                    });
                    next_cluster += 1;
                    queue.push_back(child);
                } else if child_big {
                    relabel[child] = parent;
                    queue.push_back(child);
                } else {
                    leaves.clear();
                    leaves_of(child, &mut leaves);
                    rows.extend(leaves.iter().map(|&p| CondensedRow {
                        parent,
                        child: Child::Point(p),
                        lambda,
                        size: 1,
                    }));
                }
            }
        }

        // Zero-distance merges give infinite lambda; pin them just above the
        // densest finite level so stabilities stay finite and scale with the
        // data.
        let max_finite = rows
            .iter()
            .map(|r| r.lambda)
            .filter(|l| l.is_finite())
            .fold(T::zero(), T::max);
        let cap = if max_finite > T::zero() {
            max_finite + max_finite
        } else {
            T::one()
        };
        for r in rows.iter_mut().filter(|r| !r.lambda.is_finite()) {
            r.lambda = cap;
        }

        Self {
            rows,
            num_points: n,
            num_clusters: next_cluster,
        }
    }

    fn extract_eom(&self) -> ClusterAssignment {
        let c = self.num_clusters;
        let mut birth = vec![T::zero(); c];
        let mut parent_of = vec![0usize; c];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); c];
        for r in &self.rows {
            if let Child::Cluster(id) = r.child {
                birth[id] = r.lambda;
                parent_of[id] = r.parent;
                children[r.parent].push(id);
            }
        }
        let mut stability = vec![T::zero(); c];
        for r in &self.rows {
            stability[r.parent] =
                stability[r.parent] + (r.lambda - birth[r.parent]) * T::from_count(r.size);
        }

        let mut selected = vec![false; c];
        if c == 1 {
            selected[0] = true;
        } else {
            for id in (1..c).rev() {
                let child_sum: T = children[id].iter().map(|&ch| stability[ch]).sum();
                if !children[id].is_empty() && child_sum > stability[id] {
                    stability[id] = child_sum;
                } else {
                    selected[id] = true;
                    let mut stack = children[id].clone();
                    while let Some(d) = stack.pop() {
                        selected[d] = false;
                        stack.extend_from_slice(&children[d]);
                    }
                }
            }
        }

        let mut label_id = vec![NOISE; c];
        let mut next = 0;
        for id in 0..c {
            if selected[id] {
                label_id[id] = next;
                next += 1;
            }
        }
        // Parents precede children, so one forward pass resolves each
        // cluster to its selected ancestor.
        let mut resolved = vec![NOISE; c];
        for id in 0..c {
            resolved[id] = if selected[id] {
                label_id[id]
            } else if id == 0 {
                NOISE
            } else {
                resolved[parent_of[id]]
            };
        }

        let mut labels = vec![NOISE; self.num_points];
        for r in &self.rows {
            if let Child::Point(p) = r.child {
                labels[p] = resolved[r.parent];
            }
        }
        ClusterAssignment {
            labels,
            num_clusters: next as usize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Vec<EmbeddingVector<f64>>, Vec<i32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in centers.iter().enumerate() {
            for _ in 0..per {
                let p = c
                    .iter()
                    .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                points.push(EmbeddingVector::new(p).unwrap());
                truth.push(b as i32);
            }
        }
        (points, truth)
    }

    /// Same partition up to renaming, with no noise.
    fn same_partition(a: &[i32], b: &[i32]) -> bool {
        let mut map = std::collections::HashMap::new();
        let mut rev = std::collections::HashMap::new();
        a.iter().zip(b).all(|(x, y)| {
            *x >= 0
                && *y >= 0
                && *map.entry(*x).or_insert(*y) == *y
                && *rev.entry(*y).or_insert(*x) == *x
        })
    }

    #[test]
    fn two_separated_blobs() {
        let (points, truth) = blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], 50, 0.05, 3);
        let a = hdbscan(&points, 5).unwrap();
        assert_eq!(a.num_clusters, 2);
        assert!(same_partition(&a.labels, &truth), "{:?}", a.labels);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let points = vec![EmbeddingVector::new(vec![1.0, 2.0, 3.0]).unwrap(); 10];
        let a = hdbscan(&points, 5).unwrap();
        assert_eq!(a.num_clusters, 1);
        assert_eq!(a.noise_count(), 0);
    }

    #[test]
    fn too_few_points_is_all_noise() {
        let points: Vec<_> = (0..3)
            .map(|i| EmbeddingVector::new(vec![i as f64, 0.0]).unwrap())
            .collect();
        let a = hdbscan(&points, 5).unwrap();
        assert_eq!(a.num_clusters, 0);
        assert_eq!(a.labels, vec![NOISE; 3]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(hdbscan::<f64>(&[], 5).is_err());
        let p = vec![EmbeddingVector::new(vec![0.0]).unwrap(); 4];
        assert!(hdbscan(&p, 1).is_err());
        let mixed = vec![
            EmbeddingVector::new(vec![0.0]).unwrap(),
            EmbeddingVector::new(vec![0.0, 1.0]).unwrap(),
        ];
        assert!(hdbscan(&mixed, 2).is_err());
    }

    #[test]
    fn far_outlier_is_noise() {
        let (mut points, _) = blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], 30, 0.1, 11);
        points.push(EmbeddingVector::new(vec![-40.0, 40.0]).unwrap());
        let a = hdbscan(&points, 5).unwrap();
        assert_eq!(a.num_clusters, 2);
        assert_eq!(*a.labels.last().unwrap(), NOISE);
    }

    #[test]
    fn mst_ties_are_deterministic() {
        // A regular grid is full of equal distances.
        let points: Vec<_> = (0..36)
            .map(|i| EmbeddingVector::new(vec![(i % 6) as f64, (i / 6) as f64]).unwrap())
            .collect();
        let a = hdbscan(&points, 4).unwrap();
        let b = hdbscan(&points, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_and_scaling_preserve_labels() {
        let (points, _) = blobs(
            &[vec![0.0, 0.0, 0.0], vec![6.0, 0.0, 0.0], vec![0.0, 6.0, 0.0]],
            25,
            0.3,
            5,
        );
        let base = hdbscan(&points, 5).unwrap();
        let shifted: Vec<_> = points
            .iter()
            .map(|p| EmbeddingVector::new(p.as_slice().iter().map(|x| x + 3.0).collect()).unwrap())
            .collect();
        let scaled: Vec<_> = points.iter().map(|p| p.scaled(4.0)).collect();
        assert_eq!(hdbscan(&shifted, 5).unwrap(), base);
        assert_eq!(hdbscan(&scaled, 5).unwrap(), base);
    }

    #[test]
    fn works_in_f32() {
        let (points, truth) = blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], 20, 0.05, 9);
        let points: Vec<EmbeddingVector<f32>> = points.iter().map(|p| p.cast()).collect();
        let a = hdbscan(&points, 5).unwrap();
        assert!(same_partition(&a.labels, &truth));
    }

    #[test]
    fn labels_are_contiguous() {
        let (points, _) = blobs(
            &[vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0], vec![5.0, 5.0]],
            15,
            0.4,
            21,
        );
        let a = hdbscan(&points, 4).unwrap();
        for l in 0..a.num_clusters as i32 {
            assert!(a.labels.contains(&l));
        }
        assert!(a.labels.iter().all(|&l| l == NOISE || (l as usize) < a.num_clusters));
    }

    #[test]
    fn prim_matches_reference_mst_weight() {
        // Kruskal over the full mutual-reachability graph as a cross-check.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let n = 5 + trial;
            let data: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
            let core = core_distances_sq(&data, 3, 3);
            let prim: f64 = prim_mst(&data, 3, &core).iter().map(|e| e.weight).sum();

            let mut all = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let d = squared_distance(row(&data, 3, i), row(&data, 3, j));
                    all.push((d.max(core[i]).max(core[j]).sqrt(), i, j));
                }
            }
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut comp: Vec<usize> = (0..n).collect();
            let mut total = 0.0;
            for (w, i, j) in all {
                let (ci, cj) = (comp[i], comp[j]);
                if ci != cj {
                    total += w;
                    comp.iter_mut().filter(|c| **c == cj).for_each(|c| *c = ci);
                }
            }
            assert!((prim - total).abs() < 1e-9, "trial {trial}: {prim} vs {total}");
        }
    }

    #[test]
    fn parallel_prim_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3 * PAR_MIN_LEN;
        let data: Vec<f64> = (0..n * 4).map(|_| rng.random::<f64>()).collect();
        let core = core_distances_sq(&data, 4, 5);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| prim_mst(&data, 4, &core))
        };
        let (one, four) = (run(1), run(4));
        assert_eq!(one.len(), four.len());
        for (a, b) in one.iter().zip(&four) {
            assert_eq!((a.a, a.b, a.weight), (b.a, b.b, b.weight));
        }
    }
}
