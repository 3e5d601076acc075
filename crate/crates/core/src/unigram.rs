use crate::error::{Error, Result};
use crate::vocab::{Corpus, Vocabulary};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A strictly positive probability vector indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramDistribution {
    probs: Vec<f64>,
}

impl UnigramDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty distribution".into()));
        }
        if let Some((index, &value)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::DegenerateMarginal { index, value });
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidParameter(format!("distribution mass {mass} is not 1")));
        }
        Ok(UnigramDistribution { probs })
    }

    /// Normalizes non-negative weights with a strictly positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(len: usize) -> Self {
        UnigramDistribution {
            probs: vec![1.0 / len as f64; len],
        }
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

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.probs.len() == expected {
            Ok(())
        } else {
            Err(Error::VocabularyMismatch {
                expected,
                actual: self.probs.len(),
            })
        }
    }

    pub fn total_variation(&self, other: &UnigramDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Additively smoothed background unigram `(count(w) + k) / (N + k|V|)`.
///
/// Out-of-vocabulary tokens count toward `<unk>`. When the vocabulary carries
/// an end-of-sentence token, each utterance contributes one sentence end.
pub fn estimate_background_unigram(
    corpus: &Corpus,
    vocab: &Vocabulary,
    smoothing_k: f64,
) -> Result<UnigramDistribution> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(smoothing_k > 0.0) {
        return Err(Error::InvalidParameter(format!("smoothing_k must be positive, got {smoothing_k}")));
    }
    let mut counts = vec![0u64; vocab.len()];
    for utt in corpus.utterances() {
        for tok in utt {
            counts[vocab.id_or_unk(tok).index()] += 1;
        }
        if let Some(eos) = vocab.eos_id() {
            counts[eos.index()] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + smoothing_k * vocab.len() as f64;
    UnigramDistribution::new(counts.iter().map(|&c| (c as f64 + smoothing_k) / denom).collect())
}
