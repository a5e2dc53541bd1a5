//! Probability-simplex primitives.
//!
//! Everything here is pure apart from [`sample`], which advances the
//! caller's random stream. Ties are always broken towards the lower token id.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Lower clamp applied inside the logarithm when computing entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Tolerance on the total mass of a [`ProbabilityDistribution`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// A dense distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution {
    probs: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "probability {p} at index {i} is not a finite non-negative number"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Scales non-negative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidInput(format!(
                "weights must have positive finite mass, got {total}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn one_hot(vocab_size: usize, id: TokenId) -> Result<Self> {
        if id >= vocab_size {
            return Err(Error::VocabMismatch { id, vocab_size });
        }
        let mut probs = vec![0.0; vocab_size];
        probs[id] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidInput("empty vocabulary".into()));
        }
        Ok(Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn argmax(&self) -> TokenId {
        argmax(self)
    }

    /// Total-variation distance, `0.5 * sum |p - q|`.
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::InvalidInput(format!(
                "cannot compare distributions of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        let l1: f64 = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok((0.5 * l1).min(1.0))
    }
}

/// Which distribution the Cold Stop entropy is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyScope {
    /// The full temperature-scaled distribution over the vocabulary.
    #[default]
    Full,
    /// The renormalized concept token after top-k / top-p / top-n filtering.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    /// Support size of a concept token.
    pub top_n: usize,
    pub seed: u64,
    /// Argmax everywhere; temperature is ignored.
    pub greedy: bool,
    pub entropy_scope: EntropyScope,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_k: 30,
            top_p: 0.95,
            top_n: 15,
            seed: 0,
            greedy: false,
            entropy_scope: EntropyScope::Full,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.greedy && !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.top_n == 0 {
            return Err(Error::InvalidConfig("top_n must be at least 1".into()));
        }
        if self.top_n > self.top_k {
            return Err(Error::InvalidConfig(format!(
                "top_n ({}) must not exceed top_k ({})",
                self.top_n, self.top_k
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }

    /// Temperature actually applied to logits (1 in greedy mode).
    pub fn effective_temperature(&self) -> f64 {
        if self.greedy {
            1.0
        } else {
            self.temperature
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub id: TokenId,
    pub weight: f64,
}

/// A sparse, renormalized next-token distribution kept in place of a sampled id.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptToken {
    entries: Vec<ConceptEntry>,
    origin_entropy: f64,
}

impl ConceptToken {
    /// Builds a concept token from explicit weights, renormalizing them.
    ///
    /// Entries are re-sorted by descending weight (ascending id on ties);
    /// zero weights are dropped.
    pub fn from_entries(entries: Vec<ConceptEntry>, origin_entropy: f64) -> Result<Self> {
        let mut entries: Vec<_> = entries.into_iter().filter(|e| e.weight != 0.0).collect();
        if entries.is_empty() {
            return Err(Error::InvalidInput("concept token has no mass".into()));
        }
        if entries.iter().any(|e| !e.weight.is_finite() || e.weight < 0.0) {
            return Err(Error::InvalidInput("concept weights must be positive".into()));
        }
        entries.sort_by(|a, b| rank_order(a.weight, a.id, b.weight, b.id));
        if entries.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput("duplicate token id in concept token".into()));
        }
        let total: f64 = entries.iter().map(|e| e.weight).sum();
        for e in &mut entries {
            e.weight /= total;
        }
        Ok(Self {
            entries,
            origin_entropy,
        })
    }

    pub fn one_hot(id: TokenId) -> Self {
        Self {
            entries: vec![ConceptEntry { id, weight: 1.0 }],
            origin_entropy: 0.0,
        }
    }

    pub fn entries(&self) -> &[ConceptEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entropy of the distribution this token was filtered from.
    pub fn origin_entropy(&self) -> f64 {
        self.origin_entropy
    }

    /// Entropy of the renormalized kept weights.
    pub fn filtered_entropy(&self) -> f64 {
        entropy_of(self.entries.iter().map(|e| e.weight))
    }

    /// Highest-weight id.
    pub fn top(&self) -> TokenId {
        self.entries[0].id
    }
}

/// Descending probability, ascending id on ties.
fn rank_order(pa: f64, ia: TokenId, pb: f64, ib: TokenId) -> Ordering {
    pb.partial_cmp(&pa)
        .unwrap_or(Ordering::Equal)
        .then(ia.cmp(&ib))
}

/// Token ids ordered by descending probability, ties by ascending id.
pub fn ranked_ids(probs: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| rank_order(probs[a], a, probs[b], b));
    ids
}

/// `softmax(logits / temperature)` with max subtraction.
pub fn softmax_with_temperature(
    logits: &[f64],
    temperature: f64,
) -> Result<ProbabilityDistribution> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logits".into()));
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite logit {} at index {i}",
            logits[i]
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(ProbabilityDistribution { probs })
}

/// Keeps the top-k, then the shortest descending prefix reaching `top_p`
/// of the full mass, then the top-n, and renormalizes.
pub fn filter_top_k_top_p(
    dist: &ProbabilityDistribution,
    top_k: usize,
    top_p: f64,
    top_n: usize,
) -> Result<Vec<ConceptEntry>> {
    if top_k == 0 || top_n == 0 {
        return Err(Error::InvalidConfig("top_k and top_n must be at least 1".into()));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "top_p must lie in (0, 1], got {top_p}"
        )));
    }
    let probs = dist.probs();
    let ranked = ranked_ids(probs);
    let mut keep = top_k.min(ranked.len());
    if top_p < 1.0 {
        let mut cumulative = 0.0;
        for (i, &id) in ranked[..keep].iter().enumerate() {
            cumulative += probs[id];
            if cumulative >= top_p {
                keep = i + 1;
                break;
            }
        }
    }
    keep = keep.min(top_n);
    while keep > 1 && probs[ranked[keep - 1]] == 0.0 {
        keep -= 1;
    }
    let total: f64 = ranked[..keep].iter().map(|&id| probs[id]).sum();
    Ok(ranked[..keep]
        .iter()
        .map(|&id| ConceptEntry {
            id,
            weight: probs[id] / total,
        })
        .collect())
}

/// Filters `dist` into a concept token; see [`filter_top_k_top_p`] for the pipeline.
pub fn make_concept_token(
    dist: &ProbabilityDistribution,
    config: &SamplingConfig,
) -> Result<ConceptToken> {
    let entries = filter_top_k_top_p(dist, config.top_k, config.top_p, config.top_n)?;
    Ok(ConceptToken {
        entries,
        origin_entropy: entropy(dist),
    })
}

fn entropy_of(probs: impl Iterator<Item = f64>) -> f64 {
    let h: f64 = probs.map(|p| p * p.max(LOG_CLAMP).ln()).sum();
    (-h).max(0.0)
}

/// Shannon entropy in nats, with the logarithm argument clamped at [`LOG_CLAMP`].
pub fn entropy(dist: &ProbabilityDistribution) -> f64 {
    entropy_of(dist.probs().iter().copied())
}

/// Lowest id with maximal probability.
pub fn argmax(dist: &ProbabilityDistribution) -> TokenId {
    argmax_slice(dist.probs())
}

pub(crate) fn argmax_slice(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from the dense distribution.
pub fn sample<R: Rng + ?Sized>(dist: &ProbabilityDistribution, rng: &mut R) -> TokenId {
    sample_with_uniform(dist.probs(), rng.random::<f64>())
}

/// Inverse-CDF draw from a filtered support.
pub fn sample_entries<R: Rng + ?Sized>(entries: &[ConceptEntry], rng: &mut R) -> TokenId {
    let weights: Vec<f64> = entries.iter().map(|e| e.weight).collect();
    entries[sample_with_uniform(&weights, rng.random::<f64>())].id
}

/// Returns the first index whose cumulative mass exceeds `u`.
pub fn sample_with_uniform(weights: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
