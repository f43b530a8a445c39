//! Shared domain types: embeddings, samples, corpora and the build/query
//! configuration.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PsaError, Result};
use crate::scalar::{self, Scalar};

/// A dense embedding vector.
///
/// [`EmbeddingVector::new`] enforces the type invariants (nonempty, finite).
/// [`EmbeddingVector::from_raw`] skips them so that ingested data can be
/// reported on by [`validate_corpus`] instead of failing on first contact.
#[derive(Clone, PartialEq, Default)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(PsaError::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(PsaError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn from_raw(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> T {
        scalar::dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> T {
        scalar::dot(&self.0, &self.0).sqrt()
    }

    pub fn squared_distance(&self, other: &Self) -> T {
        scalar::squared_distance(&self.0, &other.0)
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self(self.0.iter().map(|v| *v * factor).collect())
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector(
            self.0
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        )
    }
}

impl<T: fmt::Debug> fmt::Debug for EmbeddingVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl<T> AsRef<[T]> for EmbeddingVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Cross-attention relevance of one report token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_id: u32,
    pub score: f64,
}

impl TokenScore {
    pub fn new(token_id: u32, score: f64) -> Self {
        Self { token_id, score }
    }
}

impl From<(u32, f64)> for TokenScore {
    fn from((token_id, score): (u32, f64)) -> Self {
        Self { token_id, score }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<T> {
    pub id: String,
    pub image_embedding: EmbeddingVector<T>,
    pub text_embedding: Option<EmbeddingVector<T>>,
    pub attention_scores: Option<Vec<TokenScore>>,
    /// Embedding of the relevance-filtered report, when precomputed.
    pub selected_text_embedding: Option<EmbeddingVector<T>>,
}

impl<T: Scalar> PairedSample<T> {
    pub fn paired(
        id: impl Into<String>,
        image_embedding: EmbeddingVector<T>,
        text_embedding: EmbeddingVector<T>,
    ) -> Self {
        Self {
            id: id.into(),
            image_embedding,
            text_embedding: Some(text_embedding),
            attention_scores: None,
            selected_text_embedding: None,
        }
    }

    pub fn image_only(id: impl Into<String>, image_embedding: EmbeddingVector<T>) -> Self {
        Self {
            id: id.into(),
            image_embedding,
            text_embedding: None,
            attention_scores: None,
            selected_text_embedding: None,
        }
    }

    pub fn with_attention(mut self, scores: Vec<TokenScore>) -> Self {
        self.attention_scores = Some(scores);
        self
    }

    pub fn with_selected_text(mut self, embedding: EmbeddingVector<T>) -> Self {
        self.selected_text_embedding = Some(embedding);
        self
    }

    pub fn has_text(&self) -> bool {
        self.text_embedding.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub dimension: usize,
    pub paired: Vec<PairedSample<T>>,
    pub image_only: Vec<PairedSample<T>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            paired: Vec::new(),
            image_only: Vec::new(),
        }
    }

    /// Routes the sample to the paired or image-only partition by whether it
    /// carries a text embedding.
    pub fn push(&mut self, sample: PairedSample<T>) {
        if sample.has_text() {
            self.paired.push(sample);
        } else {
            self.image_only.push(sample);
        }
    }

    pub fn len(&self) -> usize {
        self.paired.len() + self.image_only.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &PairedSample<T>> {
        self.paired.iter().chain(self.image_only.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingField {
    Image,
    Text,
    SelectedText,
}

impl fmt::Display for EmbeddingField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingField::Image => "image embedding",
            EmbeddingField::Text => "text embedding",
            EmbeddingField::SelectedText => "selected-text embedding",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    ZeroDimension,
    DimensionMismatch {
        field: EmbeddingField,
        expected: usize,
        actual: usize,
    },
    NonFinite {
        field: EmbeddingField,
        index: usize,
    },
    DuplicateId,
    PairedWithoutText,
    ImageOnlyWithText,
    AttentionWithoutText,
    ScoreOutOfRange {
        token_id: u32,
        score: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub sample_id: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sample {:?}: ", self.sample_id)?;
        match &self.kind {
            ViolationKind::ZeroDimension => write!(f, "corpus dimension is 0"),
            ViolationKind::DimensionMismatch {
                field,
                expected,
                actual,
            } => write!(f, "{field} has dimension {actual}, expected {expected}"),
            ViolationKind::NonFinite { field, index } => {
                write!(f, "{field} component {index} is not finite")
            }
            ViolationKind::DuplicateId => write!(f, "duplicate sample id"),
            ViolationKind::PairedWithoutText => {
                write!(f, "listed as paired but has no text embedding")
            }
            ViolationKind::ImageOnlyWithText => {
                write!(f, "listed as image-only but carries a text embedding")
            }
            ViolationKind::AttentionWithoutText => {
                write!(f, "attention scores present without a text embedding")
            }
            ViolationKind::ScoreOutOfRange { token_id, score } => {
                write!(f, "attention score {score} of token {token_id} outside [0, 1]")
            }
        }
    }
}

/// Collects every invariant violation in the corpus. An empty report means
/// the corpus is valid.
pub fn validate_corpus<T: Scalar>(corpus: &Corpus<T>) -> Vec<Violation> {
    let mut report = Vec::new();
    let dim = corpus.dimension;
    if dim == 0 {
        report.push(Violation {
            sample_id: String::new(),
            kind: ViolationKind::ZeroDimension,
        });
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    let partitions = [(&corpus.paired, true), (&corpus.image_only, false)];
    for (samples, is_paired) in partitions {
        for sample in samples.iter() {
            let mut flag = |kind| {
                report.push(Violation {
                    sample_id: sample.id.clone(),
                    kind,
                })
            };
            let count = seen.entry(sample.id.as_str()).or_insert(0);
            *count += 1;
            if *count == 2 {
                flag(ViolationKind::DuplicateId);
            }

            let fields = [
                (EmbeddingField::Image, Some(&sample.image_embedding)),
                (EmbeddingField::Text, sample.text_embedding.as_ref()),
                (
                    EmbeddingField::SelectedText,
                    sample.selected_text_embedding.as_ref(),
                ),
            ];
            for (field, embedding) in fields {
                let Some(embedding) = embedding else { continue };
                if dim > 0 && embedding.dim() != dim {
                    flag(ViolationKind::DimensionMismatch {
                        field,
                        expected: dim,
                        actual: embedding.dim(),
                    });
                }
                if let Some(index) = embedding.as_slice().iter().position(|v| !v.is_finite()) {
                    flag(ViolationKind::NonFinite { field, index });
                }
            }

            match (is_paired, sample.has_text()) {
                (true, false) => flag(ViolationKind::PairedWithoutText),
                (false, true) => flag(ViolationKind::ImageOnlyWithText),
                _ => {}
            }
            if let Some(scores) = &sample.attention_scores {
                if !sample.has_text() {
                    flag(ViolationKind::AttentionWithoutText);
                }
                for s in scores {
                    if !(0.0..=1.0).contains(&s.score) {
                        flag(ViolationKind::ScoreOutOfRange {
                            token_id: s.token_id,
                            score: s.score,
                        });
                    }
                }
            }
        }
    }
    report
}

/// Build and query parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsaConfig {
    /// Attention threshold; tokens scoring strictly above it are kept.
    pub tau: f64,
    /// HDBSCAN minimum cluster size, also the core-distance neighbour count.
    pub min_cluster_size: usize,
    /// Upper bound M on prototypes per surrogate label.
    pub subclusters_per_label: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl PsaConfig {
    pub const DEFAULT_TAU: f64 = 0.5;
    pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 5;
    pub const DEFAULT_SUBCLUSTERS: usize = 64;
    pub const DEFAULT_TOP_K: usize = 10;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(PsaError::InvalidConfig(format!(
                "tau = {} outside [0, 1]",
                self.tau
            )));
        }
        if self.min_cluster_size < 2 {
            return Err(PsaError::InvalidConfig(format!(
                "min_cluster_size = {} must be at least 2",
                self.min_cluster_size
            )));
        }
        if self.subclusters_per_label < 1 {
            return Err(PsaError::InvalidConfig(
                "subclusters_per_label must be at least 1".into(),
            ));
        }
        if self.top_k < 1 {
            return Err(PsaError::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for PsaConfig {
    fn default() -> Self {
        Self {
            tau: Self::DEFAULT_TAU,
            min_cluster_size: Self::DEFAULT_MIN_CLUSTER_SIZE,
            subclusters_per_label: Self::DEFAULT_SUBCLUSTERS,
            top_k: Self::DEFAULT_TOP_K,
            seed: 0,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-task seeds from the
/// single user-supplied seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
