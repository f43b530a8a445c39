//! Prototype-space construction.
//!
//! Paired samples are reduced to their relevance-filtered semantic
//! embeddings, grouped into surrogate labels by HDBSCAN, and each label's
//! image embeddings are split by k-means into at most M sub-clusters. The
//! medoid sample of every sub-cluster contributes its image embedding as a
//! query prototype and its text embedding as the linked response prototype.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cluster::{self, ClusterAssignment, KMeansResult};
use crate::error::{PsaError, Result};
use crate::model::{derive_seed, validate_corpus, Corpus, EmbeddingVector, PairedSample, PsaConfig};
use crate::relevance::{resolve_semantic, SemanticTable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<T> {
    pub label_index: usize,
    pub sub_index: usize,
    /// Image embedding of the medoid sample.
    pub query: EmbeddingVector<T>,
    /// Text embedding of the same sample.
    pub response: EmbeddingVector<T>,
    pub source_sample_id: String,
}

/// Immutable grid of linked query/response prototypes, ordered by
/// `(label_index, sub_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSpace<T> {
    dimension: usize,
    prototypes: Vec<Prototype<T>>,
    query_norms: Vec<T>,
    num_labels: usize,
    max_subclusters: usize,
    build_config: PsaConfig,
    build_fingerprint: u64,
}

impl<T: Scalar> PrototypeSpace<T> {
    /// Validates and orders the prototypes. Labels must be `0..N` with no
    /// gaps, and each label's sub-indices `0..m` with `m <= max_subclusters`.
    /// `max_subclusters` overrides `build_config.subclusters_per_label`.
    pub fn new(
        dimension: usize,
        mut prototypes: Vec<Prototype<T>>,
        max_subclusters: usize,
        mut build_config: PsaConfig,
        build_fingerprint: u64,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(PsaError::InvalidSpace(msg));
        if dimension == 0 {
            return invalid("dimension is 0".into());
        }
        if prototypes.is_empty() {
            return invalid("no prototypes".into());
        }
        prototypes.sort_by_key(|p| (p.label_index, p.sub_index));
        build_config.subclusters_per_label = max_subclusters;

        let mut expected = (0usize, 0usize);
        let mut query_norms = Vec::with_capacity(prototypes.len());
        for p in &prototypes {
            let key = (p.label_index, p.sub_index);
            let first = query_norms.is_empty();
            if key != expected && (first || key != (expected.0 + 1, 0)) {
                return invalid(format!(
                    "prototype ({}, {}) breaks the contiguous (label, sub) layout",
                    key.0, key.1
                ));
            }
            if p.sub_index >= max_subclusters {
                return invalid(format!(
                    "sub-index {} not below M = {max_subclusters}",
                    p.sub_index
                ));
            }
            for (what, v) in [("query", &p.query), ("response", &p.response)] {
                if v.dim() != dimension {
                    return invalid(format!(
                        "{what} of ({}, {}) has dimension {}, expected {dimension}",
                        key.0,
                        key.1,
                        v.dim()
                    ));
                }
                if !v.is_finite() {
                    return invalid(format!("{what} of ({}, {}) is not finite", key.0, key.1));
                }
            }
            let norm = p.query.norm();
            if norm == T::zero() {
                return invalid(format!("query of ({}, {}) is the zero vector", key.0, key.1));
            }
            query_norms.push(norm);
            expected = (key.0, key.1 + 1);
        }

        Ok(Self {
            dimension,
            num_labels: expected.0 + 1,
            prototypes,
            query_norms,
            max_subclusters,
            build_config,
            build_fingerprint,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn prototypes(&self) -> &[Prototype<T>] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// N, the number of surrogate labels.
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// M, the per-label prototype cap used at build time.
    pub fn max_subclusters(&self) -> usize {
        self.max_subclusters
    }

    pub fn build_config(&self) -> &PsaConfig {
        &self.build_config
    }

    pub fn build_fingerprint(&self) -> u64 {
        self.build_fingerprint
    }

    pub(crate) fn query_norm(&self, index: usize) -> T {
        self.query_norms[index]
    }

    pub fn per_label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels];
        for p in &self.prototypes {
            counts[p.label_index] += 1;
        }
        counts
    }
}

/// Intermediate results of a build, for post-hoc checks.
#[derive(Debug, Clone)]
pub struct BuildTrace<T> {
    /// HDBSCAN result over the paired samples, in corpus order.
    pub surrogate: ClusterAssignment,
    pub labels: Vec<LabelTrace<T>>,
}

#[derive(Debug, Clone)]
pub struct LabelTrace<T> {
    /// Indices into `corpus.paired`.
    pub members: Vec<usize>,
    pub kmeans: KMeansResult<T>,
    /// Per emitted sub-cluster: member positions (into `members`) and the
    /// chosen medoid's position.
    pub subclusters: Vec<(Vec<usize>, usize)>,
}

pub fn build_space<T: Scalar>(corpus: &Corpus<T>, config: &PsaConfig) -> Result<PrototypeSpace<T>> {
    build_space_traced(corpus, config, &SemanticTable::new()).map(|(space, _)| space)
}

pub fn build_space_with_table<T: Scalar>(
    corpus: &Corpus<T>,
    config: &PsaConfig,
    table: &SemanticTable<T>,
) -> Result<PrototypeSpace<T>> {
    build_space_traced(corpus, config, table).map(|(space, _)| space)
}

/// Full build returning the intermediate clustering alongside the space.
/// Image-only samples do not take part.
pub fn build_space_traced<T: Scalar>(
    corpus: &Corpus<T>,
    config: &PsaConfig,
    table: &SemanticTable<T>,
) -> Result<(PrototypeSpace<T>, BuildTrace<T>)> {
    config.validate()?;
    let violations = validate_corpus(corpus);
    if let Some(first) = violations.first() {
        return Err(PsaError::InvalidCorpus(format!(
            "{first} ({} violation(s) total)",
            violations.len()
        )));
    }
    if corpus.paired.is_empty() {
        return Err(PsaError::InvalidCorpus("no paired samples".into()));
    }

    let semantic = corpus
        .paired
        .iter()
        .map(|s| resolve_semantic(s, config.tau, table))
        .collect::<Result<Vec<_>>>()?;
    let surrogate = cluster::hdbscan(&semantic, config.min_cluster_size)?;
    if surrogate.num_clusters == 0 {
        return Err(PsaError::NoSurrogateLabels);
    }

    let groups = surrogate.members();
    let per_label = groups
        .into_par_iter()
        .enumerate()
        .map(|(label, members)| {
            let seed = derive_seed(config.seed, label as u64);
            label_prototypes(&corpus.paired, label, members, config.subclusters_per_label, seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut prototypes = Vec::new();
    let mut labels = Vec::with_capacity(per_label.len());
    for (protos, trace) in per_label {
        prototypes.extend(protos);
        labels.push(trace);
    }
    let space = PrototypeSpace::new(
        corpus.dimension,
        prototypes,
        config.subclusters_per_label,
        *config,
        corpus_fingerprint(corpus),
    )?;
    Ok((space, BuildTrace { surrogate, labels }))
}

fn label_prototypes<T: Scalar>(
    paired: &[PairedSample<T>],
    label: usize,
    members: Vec<usize>,
    max_subclusters: usize,
    seed: u64,
) -> Result<(Vec<Prototype<T>>, LabelTrace<T>)> {
    let images: Vec<EmbeddingVector<T>> = members
        .iter()
        .map(|&i| paired[i].image_embedding.clone())
        .collect();
    let m = max_subclusters.min(images.len());
    let km = cluster::kmeans(&images, m, seed)?;

    let mut prototypes = Vec::new();
    let mut subclusters = Vec::new();
    // Centroids with no members (possible only with duplicate images) are
    // skipped; sub-indices stay contiguous in centroid order.
    for sub_members in km.members().into_iter().filter(|m| !m.is_empty()) {
        let pos = cluster::medoid(&images, &sub_members)?;
        let source = &paired[members[pos]];
        let response = source
            .text_embedding
            .clone()
            .ok_or_else(|| PsaError::Invariant(format!("paired sample {:?} lost its text", source.id)))?;
        prototypes.push(Prototype {
            label_index: label,
            sub_index: subclusters.len(),
            query: source.image_embedding.clone(),
            response,
            source_sample_id: source.id.clone(),
        });
        subclusters.push((sub_members, pos));
    }
    Ok((
        prototypes,
        LabelTrace {
            members,
            kmeans: km,
            subclusters,
        },
    ))
}

/// Order-independent 64-bit content hash over every sample (ids, roles,
/// embeddings and attention scores). Embeddings are hashed at `f64` width,
/// so the value does not depend on the in-memory scalar type.
pub fn corpus_fingerprint<T: Scalar>(corpus: &Corpus<T>) -> u64 {
    fn put_vec<T: Scalar>(h: &mut Sha256, v: Option<&EmbeddingVector<T>>) {
        match v {
            None => h.update([0u8]),
            Some(v) => {
                h.update([1u8]);
                h.update((v.dim() as u64).to_le_bytes());
                for x in v.as_slice() {
                    h.update(x.to_f64_lossy().to_le_bytes());
                }
            }
        }
    }
    fn first_u64(bytes: &[u8]) -> u64 {
        u64::from_le_bytes(bytes[..8].try_into().expect("digest is 32 bytes"))
    }

    let partitions = [(&corpus.paired, 1u8), (&corpus.image_only, 2u8)];
    let mut sum = 0u64;
    for (samples, role) in partitions {
        for s in samples.iter() {
            let mut h = Sha256::new();
            h.update([role]);
            h.update((s.id.len() as u64).to_le_bytes());
            h.update(s.id.as_bytes());
            put_vec(&mut h, Some(&s.image_embedding));
            put_vec(&mut h, s.text_embedding.as_ref());
            put_vec(&mut h, s.selected_text_embedding.as_ref());
            match &s.attention_scores {
                None => h.update([0u8]),
                Some(scores) => {
                    h.update([1u8]);
                    h.update((scores.len() as u64).to_le_bytes());
                    for t in scores {
                        h.update(t.token_id.to_le_bytes());
                        h.update(t.score.to_le_bytes());
                    }
                }
            }
            sum = sum.wrapping_add(first_u64(&h.finalize()));
        }
    }
    let mut h = Sha256::new();
    h.update((corpus.dimension as u64).to_le_bytes());
    h.update((corpus.len() as u64).to_le_bytes());
    h.update(sum.to_le_bytes());
    first_u64(&h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSummary {
    pub dimension: usize,
    pub num_labels: usize,
    pub max_subclusters: usize,
    pub per_label: Vec<usize>,
    pub total: usize,
    pub distinct_sources: usize,
    pub fingerprint: u64,
    pub config: PsaConfig,
}

pub fn space_summary<T: Scalar>(space: &PrototypeSpace<T>) -> SpaceSummary {
    let distinct: HashSet<&str> = space
        .prototypes()
        .iter()
        .map(|p| p.source_sample_id.as_str())
        .collect();
    SpaceSummary {
        dimension: space.dimension(),
        num_labels: space.num_labels(),
        max_subclusters: space.max_subclusters(),
        per_label: space.per_label_counts(),
        total: space.len(),
        distinct_sources: distinct.len(),
        fingerprint: space.build_fingerprint(),
        config: *space.build_config(),
    }
}

impl fmt::Display for SpaceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dimension (D)         {}", self.dimension)?;
        writeln!(f, "surrogate labels (N)  {}", self.num_labels)?;
        writeln!(f, "max per label (M)     {}", self.max_subclusters)?;
        writeln!(f, "total prototypes      {}", self.total)?;
        writeln!(f, "distinct sources      {}", self.distinct_sources)?;
        writeln!(f, "corpus fingerprint    {:016x}", self.fingerprint)?;
        writeln!(
            f,
            "build config          tau={} min_cluster_size={} subclusters={} top_k={} seed={}",
            self.config.tau,
            self.config.min_cluster_size,
            self.config.subclusters_per_label,
            self.config.top_k,
            self.config.seed
        )?;
        writeln!(f, "label  prototypes")?;
        let widest = self.per_label.iter().copied().max().unwrap_or(1).max(1);
        for (label, &count) in self.per_label.iter().enumerate() {
            let bar = (count * 40).div_ceil(widest);
            writeln!(f, "{label:>5}  {count:>10}  {}", "#".repeat(bar))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TokenScore;

    fn v(x: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn proto(label: usize, sub: usize, q: &[f64]) -> Prototype<f64> {
        Prototype {
            label_index: label,
            sub_index: sub,
            query: v(q),
            response: v(q),
            source_sample_id: format!("p{label}-{sub}"),
        }
    }

    /// Three tight semantic groups; one holds a single sample.
    fn small_corpus() -> Corpus<f64> {
        let mut c = Corpus::new(2);
        let groups: [(&[f64; 2], usize); 3] = [(&[10.0, 0.0], 6), (&[0.0, 10.0], 6), (&[-10.0, -10.0], 1)];
        let mut k = 0;
        for (g, (center, count)) in groups.iter().enumerate() {
            for i in 0..*count {
                let jitter = 0.01 * i as f64;
                let img = v(&[center[0] + jitter, center[1] - jitter]);
                let txt = v(&[center[0] - jitter, center[1] + jitter]);
                c.push(
                    PairedSample::paired(format!("g{g}-{i}"), img, txt.clone())
                        .with_attention(vec![TokenScore::new(0, 0.9), TokenScore::new(1, 0.1)])
                        .with_selected_text(txt),
                );
                k += 1;
            }
        }
        assert_eq!(k, 13);
        c
    }

    #[test]
    fn space_rejects_gaps_and_duplicates() {
        let cfg = PsaConfig::default();
        assert!(PrototypeSpace::new(2, vec![proto(0, 0, &[1., 0.]), proto(0, 2, &[1., 0.])], 4, cfg, 0).is_err());
        assert!(PrototypeSpace::new(2, vec![proto(0, 0, &[1., 0.]), proto(0, 0, &[0., 1.])], 4, cfg, 0).is_err());
        assert!(PrototypeSpace::new(2, vec![proto(1, 0, &[1., 0.])], 4, cfg, 0).is_err());
        assert!(PrototypeSpace::new(2, vec![proto(0, 4, &[1., 0.])], 4, cfg, 0).is_err());
        assert!(PrototypeSpace::new(2, vec![proto(0, 0, &[0., 0.])], 4, cfg, 0).is_err());
        let ok = PrototypeSpace::new(
            2,
            vec![proto(1, 0, &[1., 0.]), proto(0, 1, &[0., 1.]), proto(0, 0, &[1., 1.])],
            4,
            cfg,
            0,
        )
        .unwrap();
        assert_eq!(ok.num_labels(), 2);
        assert_eq!(ok.per_label_counts(), vec![2, 1]);
        let keys: Vec<_> = ok.prototypes().iter().map(|p| (p.label_index, p.sub_index)).collect();
        assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn singleton_label_contributes_one_prototype() {
        let c = small_corpus();
        let lone = c.paired.iter().position(|s| s.id == "g2-0").unwrap();
        let (protos, trace) = label_prototypes(&c.paired, 5, vec![lone], 64, 1).unwrap();
        assert_eq!(protos.len(), 1);
        assert_eq!(protos[0].source_sample_id, "g2-0");
        assert_eq!((protos[0].label_index, protos[0].sub_index), (5, 0));
        assert_eq!(trace.kmeans.centroids.len(), 1);
    }

    #[test]
    fn duplicate_images_collapse_to_one_prototype() {
        let mut c = Corpus::new(2);
        for i in 0..4 {
            c.push(PairedSample::paired(format!("d{i}"), v(&[1.0, 1.0]), v(&[2.0, 0.0])));
        }
        let cfg = PsaConfig {
            min_cluster_size: 2,
            ..PsaConfig::default()
        };
        let space = build_space(&c, &cfg).unwrap();
        assert_eq!(space.per_label_counts(), vec![1]);
    }

    #[test]
    fn prototypes_come_from_real_samples() {
        let c = small_corpus();
        let cfg = PsaConfig {
            min_cluster_size: 3,
            subclusters_per_label: 2,
            seed: 9,
            ..PsaConfig::default()
        };
        let space = build_space(&c, &cfg).unwrap();
        assert_eq!(space.num_labels(), 2);
        assert_eq!(space.len(), 4);
        for p in space.prototypes() {
            let s = c.paired.iter().find(|s| s.id == p.source_sample_id).unwrap();
            assert_eq!(&p.query, &s.image_embedding);
            assert_eq!(Some(&p.response), s.text_embedding.as_ref());
        }
    }

    #[test]
    fn all_noise_is_an_error() {
        let c = small_corpus();
        let cfg = PsaConfig {
            min_cluster_size: 50,
            ..PsaConfig::default()
        };
        assert!(matches!(build_space(&c, &cfg), Err(PsaError::NoSurrogateLabels)));
    }

    #[test]
    fn invalid_corpus_is_rejected() {
        let mut c = small_corpus();
        c.paired[0].image_embedding = v(&[1.0]);
        assert!(matches!(
            build_space(&c, &PsaConfig::default()),
            Err(PsaError::InvalidCorpus(_))
        ));
        let empty = Corpus::<f64>::new(2);
        assert!(build_space(&empty, &PsaConfig::default()).is_err());
    }

    #[test]
    fn fingerprint_ignores_sample_order() {
        let c = small_corpus();
        let mut r = c.clone();
        r.paired.reverse();
        assert_eq!(corpus_fingerprint(&c), corpus_fingerprint(&r));
        let mut changed = c.clone();
        changed.paired[0].image_embedding = v(&[10.5, 0.0]);
        assert_ne!(corpus_fingerprint(&c), corpus_fingerprint(&changed));
    }

    #[test]
    fn summary_reports_counts() {
        let protos: Vec<_> = (0..6)
            .flat_map(|l| (0..64).map(move |s| proto(l, s, &[1.0 + l as f64, s as f64])))
            .collect();
        let space = PrototypeSpace::new(2, protos, 64, PsaConfig::default(), 1).unwrap();
        let s = space_summary(&space);
        assert_eq!(s.total, 384);
        assert_eq!(s.per_label, vec![64; 6]);
        let text = s.to_string();
        assert!(text.contains("total prototypes      384"));
        assert!(text.contains("surrogate labels (N)  6"));
    }
}
