//! Seeded synthetic corpora of Gaussian semantic blobs, plus brute-force
//! reference implementations used to check the main code paths.
//!
//! Each blob stands for one distinct finding. A sample's image, text and
//! filtered-text embeddings are drawn independently around the same blob
//! center, and its attention scores mark a blob-specific token subset as
//! relevant (above 0.5) among filler tokens (below 0.5).

pub mod oracle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PsaError, Result};
use crate::model::{Corpus, EmbeddingVector, PairedSample, TokenScore};
use crate::scalar::Scalar;

pub const TOKENS_PER_SAMPLE: usize = 8;
pub const RELEVANT_TOKENS: usize = 3;
/// Smallest `blob_separation / noise_sigma` accepted by [`generate`].
pub const MIN_SEPARATION_RATIO: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_blobs: usize,
    pub samples_per_blob: usize,
    pub dimension: usize,
    /// Minimum distance between blob centers.
    pub blob_separation: f64,
    /// Root-mean-square length of a sample's offset from its center; each
    /// coordinate has standard deviation `noise_sigma / sqrt(dimension)`.
    pub noise_sigma: f64,
    /// Fraction of samples that keep their text, in `(0, 1]`.
    pub paired_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PsaError::InvalidArgument(m));
        if self.dimension == 0 {
            return bad("dimension must be at least 1".into());
        }
        if self.num_blobs == 0 || self.num_blobs > 2 * self.dimension {
            return bad(format!(
                "num_blobs = {} must be in 1..={} for dimension {}",
                self.num_blobs,
                2 * self.dimension,
                self.dimension
            ));
        }
        if self.samples_per_blob == 0 {
            return bad("samples_per_blob must be at least 1".into());
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma = {} must be positive", self.noise_sigma));
        }
        let ratio = self.blob_separation / self.noise_sigma;
        if ratio.is_nan() || ratio < MIN_SEPARATION_RATIO {
            return bad(format!(
                "blob_separation / noise_sigma = {} is below {MIN_SEPARATION_RATIO}",
                self.blob_separation / self.noise_sigma
            ));
        }
        if !(self.paired_fraction > 0.0 && self.paired_fraction <= 1.0) {
            return bad(format!(
                "paired_fraction = {} outside (0, 1]",
                self.paired_fraction
            ));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.num_blobs * self.samples_per_blob
    }

    /// Number of samples that keep their text; at least one.
    pub fn paired_count(&self) -> usize {
        let n = self.total_samples();
        ((self.paired_fraction * n as f64).round() as usize).clamp(1, n)
    }

    /// Blob centers at `±(sep/√2)·e_a`: positive axes first, then negative.
    /// Every pair of centers is at least `blob_separation` apart.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let scale = self.blob_separation / std::f64::consts::SQRT_2;
        (0..self.num_blobs)
            .map(|b| {
                let mut c = vec![0.0; self.dimension];
                let axis = b % self.dimension;
                c[axis] = if b < self.dimension { scale } else { -scale };
                c
            })
            .collect()
    }
}

/// Generates the corpus and the blob of every sample, listed for
/// `corpus.paired` followed by `corpus.image_only`.
///
/// Paired samples are spread across blobs as evenly as possible.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<(Corpus<T>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = spec.centers();
    let n = spec.total_samples();

    // Values are rounded through f32 so the on-disk format is lossless.
    let coord_sigma = spec.noise_sigma / (spec.dimension as f64).sqrt();
    let draw = |rng: &mut ChaCha8Rng, center: &[f64]| -> EmbeddingVector<T> {
        EmbeddingVector::from_raw(
            center
                .iter()
                .map(|c| {
                    let x = c + coord_sigma * rng.sample::<f64, _>(StandardNormal);
                    T::widen_f32(x as f32)
                })
                .collect(),
        )
    };

    let mut samples = Vec::with_capacity(n);
    for (b, center) in centers.iter().enumerate() {
        for i in 0..spec.samples_per_blob {
            let image = draw(&mut rng, center);
            let text = draw(&mut rng, center);
            let selected = draw(&mut rng, center);
            let attention = attention_scores(&mut rng, b);
            samples.push((
                PairedSample {
                    id: format!("b{b}-s{i:05}"),
                    image_embedding: image,
                    text_embedding: Some(text),
                    attention_scores: Some(attention),
                    selected_text_embedding: Some(selected),
                },
                b,
            ));
        }
    }

    // Interleave blobs round-robin after a per-blob shuffle; the first
    // `paired_count` in that order keep their text.
    let per = spec.samples_per_blob;
    let mut shuffled: Vec<Vec<usize>> = (0..spec.num_blobs)
        .map(|b| (b * per..(b + 1) * per).collect())
        .collect();
    for order in &mut shuffled {
        order.shuffle(&mut rng);
    }
    let mut keeps_text = vec![false; n];
    let interleaved = (0..per).flat_map(|r| shuffled.iter().map(move |o| o[r]));
    for idx in interleaved.take(spec.paired_count()) {
        keeps_text[idx] = true;
    }

    let mut corpus = Corpus::new(spec.dimension);
    let mut paired_labels = Vec::new();
    let mut image_labels = Vec::new();
    for ((mut sample, blob), keep) in samples.into_iter().zip(keeps_text) {
        if keep {
            paired_labels.push(blob);
        } else {
            sample.text_embedding = None;
            sample.attention_scores = None;
            sample.selected_text_embedding = None;
            image_labels.push(blob);
        }
        corpus.push(sample);
    }
    paired_labels.extend(image_labels);
    Ok((corpus, paired_labels))
}

fn attention_scores(rng: &mut ChaCha8Rng, blob: usize) -> Vec<TokenScore> {
    let mut tokens: Vec<TokenScore> = (0..TOKENS_PER_SAMPLE)
        .map(|t| {
            if t < RELEVANT_TOKENS {
                TokenScore::new((blob * 16 + t) as u32, rng.random_range(0.6..=1.0))
            } else {
                TokenScore::new(1000 + rng.random_range(0..100u32), rng.random_range(0.0..0.4))
            }
        })
        .collect();
    tokens.shuffle(rng);
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_corpus;
    use crate::relevance::select_tokens;

    fn spec() -> SynthSpec {
        SynthSpec {
            num_blobs: 2,
            samples_per_blob: 40,
            dimension: 8,
            blob_separation: 10.0,
            noise_sigma: 0.05,
            paired_fraction: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn fully_paired_balanced_corpus() {
        let (c, labels) = generate::<f64>(&spec()).unwrap();
        assert_eq!(c.paired.len(), 80);
        assert!(c.image_only.is_empty());
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 40);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 40);
        assert!(validate_corpus(&c).is_empty());
    }

    #[test]
    fn quarter_paired() {
        let (c, labels) = generate::<f64>(&SynthSpec {
            paired_fraction: 0.25,
            ..spec()
        })
        .unwrap();
        assert_eq!(c.paired.len(), 20);
        assert_eq!(c.image_only.len(), 60);
        assert_eq!(labels[..20].iter().filter(|&&l| l == 0).count(), 10);
        assert!(c.image_only.iter().all(|s| s.text_embedding.is_none()));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate::<f64>(&spec()).unwrap();
        let b = generate::<f64>(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate::<f64>(&SynthSpec { seed: 8, ..spec() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn relevant_tokens_exceed_half() {
        let (c, labels) = generate::<f64>(&spec()).unwrap();
        for (s, b) in c.paired.iter().zip(&labels) {
            let sel = select_tokens(s.id.clone(), s.attention_scores.as_ref().unwrap(), 0.5).unwrap();
            let mut kept = sel.kept_token_ids.clone();
            kept.sort();
            let expect: Vec<u32> = (0..RELEVANT_TOKENS as u32).map(|t| *b as u32 * 16 + t).collect();
            assert_eq!(kept, expect);
        }
    }

    #[test]
    fn centers_are_separated() {
        let s = SynthSpec { num_blobs: 6, dimension: 4, ..spec() };
        let c = s.centers();
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d >= s.blob_separation - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_poor_separation_and_bad_fractions() {
        assert!(generate::<f64>(&SynthSpec { noise_sigma: 3.0, ..spec() }).is_err());
        assert!(generate::<f64>(&SynthSpec { paired_fraction: 0.0, ..spec() }).is_err());
        assert!(generate::<f64>(&SynthSpec { num_blobs: 17, ..spec() }).is_err());
    }

    #[test]
    fn tiny_fraction_keeps_one_pair_per_blob() {
        let s = SynthSpec {
            num_blobs: 6,
            samples_per_blob: 200,
            paired_fraction: 0.01,
            ..spec()
        };
        let (c, labels) = generate::<f64>(&s).unwrap();
        assert_eq!(c.paired.len(), 12);
        for b in 0..6 {
            assert_eq!(labels[..12].iter().filter(|&&l| l == b).count(), 2);
        }
    }
}
