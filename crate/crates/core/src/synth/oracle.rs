//! Exhaustive reference implementations. Nothing here calls into the
//! clustering or query modules; they exist to check those modules.

use std::collections::HashMap;
use std::hash::Hash;

/// Indices of the `k` vectors most cosine-similar to `q`, by a full stable
/// sort (equal similarities keep index order).
pub fn oracle_top_k(vectors: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let sims: Vec<f64> = vectors
        .iter()
        .map(|v| {
            let mut qv = 0.0;
            let mut qq = 0.0;
            let mut vv = 0.0;
            for (a, b) in q.iter().zip(v) {
                qv += a * b;
                qq += a * a;
                vv += b * b;
            }
            (qv / (qq.sqrt() * vv.sqrt())).clamp(-1.0, 1.0)
        })
        .collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&i, &j| sims[j].partial_cmp(&sims[i]).expect("finite similarity"));
    order.truncate(k);
    order
}

/// Position (within `members`) of the member nearest the members' mean,
/// lowest position on ties.
pub fn oracle_medoid(members: &[Vec<f64>]) -> usize {
    assert!(!members.is_empty(), "oracle_medoid needs members");
    let dim = members[0].len();
    let mut mean = vec![0.0; dim];
    for m in members {
        for (acc, x) in mean.iter_mut().zip(m) {
            *acc += x;
        }
    }
    let n = members.len() as f64;
    for acc in &mut mean {
        *acc /= n;
    }
    let dists: Vec<f64> = members
        .iter()
        .map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let mut best = 0;
    for (i, d) in dists.iter().enumerate() {
        if *d < dists[best] {
            best = i;
        }
    }
    best
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from the contingency table. Every distinct label
/// value, including a noise marker, is its own group. Degenerate cases with
/// a zero denominator (both partitions trivial) score 1.0.
pub fn oracle_ari<L: Eq + Hash + Clone>(a: &[L], b: &[L]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let mut table: HashMap<(L, L), u64> = HashMap::new();
    let mut rows: HashMap<L, u64> = HashMap::new();
    let mut cols: HashMap<L, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x.clone(), y.clone())).or_default() += 1;
        *rows.entry(x.clone()).or_default() += 1;
        *cols.entry(y.clone()).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(a.len() as u64);
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        return 1.0;
    }
    (index - expected) / (max_index - expected)
}
