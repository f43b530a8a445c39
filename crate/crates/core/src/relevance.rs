//! Surrogate token filtering: keep the report tokens whose cross-attention
//! exceeds the threshold and resolve the embedding of the shortened report.

use std::collections::HashMap;

use crate::error::{PsaError, Result};
use crate::model::{EmbeddingVector, PairedSample, TokenScore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSelection {
    pub sample_id: String,
    /// Kept tokens in input order; repeated ids are kept as repeated.
    pub kept_token_ids: Vec<u32>,
    pub kept_fraction: f64,
    /// True when no score exceeded the threshold and the single best token
    /// was kept instead.
    pub fallback: bool,
}

/// Precomputed embeddings of filtered reports, keyed by the kept-token
/// sequence.
pub type SemanticTable<T> = HashMap<Vec<u32>, EmbeddingVector<T>>;

/// Keeps every token with `score > tau`, preserving order.
///
/// When nothing exceeds `tau` the highest-scoring token is kept alone, with
/// ties going to the lowest token id.
pub fn select_tokens(
    sample_id: impl Into<String>,
    attention: &[TokenScore],
    tau: f64,
) -> Result<TokenSelection> {
    if attention.is_empty() {
        return Err(PsaError::NoTokens);
    }
    if let Some(bad) = attention.iter().find(|t| !(0.0..=1.0).contains(&t.score)) {
        return Err(PsaError::ScoreOutOfRange {
            token_id: bad.token_id,
            score: bad.score,
        });
    }

    let mut kept: Vec<u32> = attention
        .iter()
        .filter(|t| t.score > tau)
        .map(|t| t.token_id)
        .collect();
    let fallback = kept.is_empty();
    if fallback {
        let best = attention
            .iter()
            .reduce(|best, t| {
                if t.score > best.score || (t.score == best.score && t.token_id < best.token_id) {
                    t
                } else {
                    best
                }
            })
            .expect("nonempty");
        kept.push(best.token_id);
    }

    Ok(TokenSelection {
        sample_id: sample_id.into(),
        kept_fraction: kept.len() as f64 / attention.len() as f64,
        kept_token_ids: kept,
        fallback,
    })
}

/// Resolves the semantic embedding of a filtered report.
///
/// A precomputed `selected_text_embedding` on the sample wins; otherwise the
/// kept-token sequence is looked up in `table`.
pub fn semantic_embedding<T: Scalar>(
    sample: &PairedSample<T>,
    selection: &TokenSelection,
    table: &SemanticTable<T>,
) -> Result<EmbeddingVector<T>> {
    if let Some(e) = &sample.selected_text_embedding {
        return Ok(e.clone());
    }
    table
        .get(&selection.kept_token_ids)
        .cloned()
        .ok_or_else(|| PsaError::NoSemanticEmbedding(sample.id.clone()))
}

/// The clustering input for one paired sample.
///
/// Samples without attention scores are treated as fully relevant: the
/// precomputed filtered embedding is used if present, else the full text
/// embedding.
pub fn resolve_semantic<T: Scalar>(
    sample: &PairedSample<T>,
    tau: f64,
    table: &SemanticTable<T>,
) -> Result<EmbeddingVector<T>> {
    match &sample.attention_scores {
        Some(scores) => {
            let selection = select_tokens(sample.id.clone(), scores, tau)?;
            semantic_embedding(sample, &selection, table)
        }
        None => sample
            .selected_text_embedding
            .as_ref()
            .or(sample.text_embedding.as_ref())
            .cloned()
            .ok_or_else(|| PsaError::NoSemanticEmbedding(sample.id.clone())),
    }
}
