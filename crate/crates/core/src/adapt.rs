//! Marginal adaptation of a base LM.
//!
//! The adapted model multiplies `p(w | h)` by `(g(w) / u(w))^lambda`, where
//! `u` is the background unigram and `g` interpolates background, global and
//! personal unigrams. The factor depends only on `w`, so it is stored once
//! per model as a log-space vector over the vocabulary.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram::LanguageModel;
use crate::unigram::UnigramDistribution;
use crate::vocab::TokenId;

const WEIGHT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    /// Exponent on the marginal ratio.
    pub lambda: f64,
    /// Weight of the federated global unigram.
    pub alpha: f64,
    /// Weight of the client's personal unigram.
    pub beta: f64,
}

impl Default for AdaptationParams {
    fn default() -> Self {
        AdaptationParams {
            lambda: 0.2,
            alpha: 0.5,
            beta: 0.25,
        }
    }
}

impl AdaptationParams {
    pub fn new(lambda: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = AdaptationParams { lambda, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.lambda.is_finite() && self.alpha.is_finite() && self.beta.is_finite();
        if !finite || self.lambda < 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda, alpha and beta must be finite and non-negative (got {}, {}, {})",
                self.lambda, self.alpha, self.beta
            )));
        }
        if self.alpha + self.beta > 1.0 + WEIGHT_SLACK {
            return Err(Error::InvalidParameter(format!(
                "alpha + beta = {} exceeds 1",
                self.alpha + self.beta
            )));
        }
        Ok(())
    }

    pub fn background_weight(&self) -> f64 {
        (1.0 - self.alpha - self.beta).max(0.0)
    }

    /// True when the adapted model is guaranteed to reproduce the base model.
    pub fn is_identity(&self) -> bool {
        self.lambda == 0.0 || (self.alpha == 0.0 && self.beta == 0.0)
    }
}

/// `g(w) = (1 - alpha - beta) u(w) + alpha q_global(w) + beta q_personal(w)`.
pub fn interpolate_marginals(
    u: &UnigramDistribution,
    q_global: &UnigramDistribution,
    q_personal: &UnigramDistribution,
    params: &AdaptationParams,
) -> Result<UnigramDistribution> {
    params.validate()?;
    q_global.check_len(u.len())?;
    q_personal.check_len(u.len())?;
    let bg = params.background_weight();
    let g = u
        .probs()
        .iter()
        .zip(q_global.probs())
        .zip(q_personal.probs())
        .map(|((&b, &q), &p)| bg * b + params.alpha * q + params.beta * p)
        .collect();
    UnigramDistribution::new(g)
}

/// A base LM rescaled by a per-word marginal factor.
#[derive(Clone)]
pub struct AdaptedLM {
    base: Arc<dyn LanguageModel>,
    log_factor: Vec<f64>,
}

impl std::fmt::Debug for AdaptedLM {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptedLM")
            .field("order", &self.base.order())
            .field("vocab", &self.base.vocab().len())
            .finish_non_exhaustive()
    }
}

/// Stores `lambda * (ln g(w) - ln u(w))` for every vocabulary entry.
pub fn build_adapted_lm(
    base: Arc<dyn LanguageModel>,
    u: &UnigramDistribution,
    g: &UnigramDistribution,
    lambda: f64,
) -> Result<AdaptedLM> {
    let n = base.vocab().len();
    u.check_len(n)?;
    g.check_len(n)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {lambda}")));
    }
    for dist in [u, g] {
        if let Some((index, &value)) = dist.probs().iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
            return Err(Error::DegenerateMarginal { index, value });
        }
    }
    let log_factor = if lambda == 0.0 {
        vec![0.0; n]
    } else {
        u.probs()
            .iter()
            .zip(g.probs())
            .map(|(&b, &m)| lambda * (m.ln() - b.ln()))
            .collect()
    };
    Ok(AdaptedLM { base, log_factor })
}

impl AdaptedLM {
    /// The base model with a unit factor on every word.
    pub fn identity(base: Arc<dyn LanguageModel>) -> Self {
        let n = base.vocab().len();
        AdaptedLM {
            base,
            log_factor: vec![0.0; n],
        }
    }

    /// Builds directly from a precomputed log-factor vector.
    pub fn from_log_factor(base: Arc<dyn LanguageModel>, log_factor: Vec<f64>) -> Result<Self> {
        if log_factor.len() != base.vocab().len() {
            return Err(Error::VocabularyMismatch {
                expected: base.vocab().len(),
                actual: log_factor.len(),
            });
        }
        Ok(AdaptedLM { base, log_factor })
    }

    pub fn base(&self) -> &Arc<dyn LanguageModel> {
        &self.base
    }

    pub fn log_factor(&self) -> &[f64] {
        &self.log_factor
    }

    pub fn is_identity(&self) -> bool {
        self.log_factor.iter().all(|&f| f == 0.0)
    }

    /// Base log-probability plus the word's log factor.
    pub fn log_prob_unnormalized(&self, word: TokenId, history: &[TokenId]) -> f64 {
        self.base.log_prob(word, history) + self.log_factor[word.index()]
    }

    /// `ln Z(h)` via log-sum-exp over the vocabulary.
    pub fn log_normalizer(&self, history: &[TokenId]) -> f64 {
        let scores: Vec<f64> = self
            .base
            .vocab()
            .ids()
            .map(|w| self.log_prob_unnormalized(w, history))
            .collect();
        log_sum_exp(&scores)
    }

    pub fn log_prob_normalized(&self, word: TokenId, history: &[TokenId]) -> f64 {
        self.log_prob_unnormalized(word, history) - self.log_normalizer(history)
    }

    /// Normalized log-probabilities of every vocabulary entry after
    /// `history`, computing `Z(h)` once.
    pub fn log_distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let mut scores: Vec<f64> = self
            .base
            .vocab()
            .ids()
            .map(|w| self.log_prob_unnormalized(w, history))
            .collect();
        let z = log_sum_exp(&scores);
        for s in &mut scores {
            *s -= z;
        }
        scores
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::BackoffNGramLM;
    use crate::vocab::Vocabulary;

    fn uniform_base(n: usize) -> Arc<dyn LanguageModel> {
        let words: Vec<String> = (1..n).map(|i| format!("w{i}")).collect();
        Arc::new(BackoffNGramLM::uniform(Vocabulary::from_words(words).unwrap()))
    }

    fn dist(p: &[f64]) -> UnigramDistribution {
        UnigramDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_interpolations_are_exact() {
        let u = dist(&[0.2, 0.3, 0.5]);
        let qg = dist(&[0.6, 0.3, 0.1]);
        let qp = dist(&[0.1, 0.1, 0.8]);
        let none = AdaptationParams::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(interpolate_marginals(&u, &qg, &qp, &none).unwrap(), u);
        let global = AdaptationParams::new(1.0, 1.0, 0.0).unwrap();
        assert_eq!(interpolate_marginals(&u, &qg, &qp, &global).unwrap(), qg);
    }

    #[test]
    fn interpolation_hand_arithmetic() {
        let g = interpolate_marginals(
            &dist(&[0.5, 0.5]),
            &dist(&[0.9, 0.1]),
            &dist(&[0.1, 0.9]),
            &AdaptationParams::new(1.0, 0.5, 0.25).unwrap(),
        )
        .unwrap();
        assert!((g.probs()[0] - 0.6).abs() < 1e-15);
        assert!((g.probs()[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn interpolation_rejects_mismatch() {
        let err = interpolate_marginals(
            &dist(&[0.5, 0.5]),
            &dist(&[0.2, 0.3, 0.5]),
            &dist(&[0.5, 0.5]),
            &AdaptationParams::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("vocabulary mismatch"));
    }

    #[test]
    fn params_validation() {
        assert!(AdaptationParams::new(0.2, 0.75, 0.5).is_err());
        assert!(AdaptationParams::new(-0.1, 0.5, 0.25).is_err());
        assert!(AdaptationParams::new(0.0, 0.5, 0.5).is_ok());
    }

    #[test]
    fn factor_values() {
        let base = uniform_base(2);
        let u = dist(&[0.1, 0.9]);
        let g = dist(&[0.2, 0.8]);
        let full = build_adapted_lm(base.clone(), &u, &g, 1.0).unwrap();
        assert!((full.log_factor()[0].exp() - 2.0).abs() < 1e-12);
        let half = build_adapted_lm(base.clone(), &u, &g, 0.5).unwrap();
        assert!((half.log_factor()[0].exp() - 1.414_213_56).abs() < 1e-8);
        let zero = build_adapted_lm(base, &u, &g, 0.0).unwrap();
        assert!(zero.is_identity());
    }

    #[test]
    fn uniform_base_with_factors_normalizes_by_hand() {
        // factors (2, 2, 1, 1) on a uniform base over 4 words
        let base = uniform_base(4);
        let lf = vec![2f64.ln(), 2f64.ln(), 0.0, 0.0];
        let alm = AdaptedLM::from_log_factor(base, lf).unwrap();
        assert!((alm.log_normalizer(&[]).exp() - 1.5).abs() < 1e-12);
        let expected = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (w, e) in (0..4).map(TokenId).zip(expected) {
            assert!((alm.log_prob_normalized(w, &[]).exp() - e).abs() < 1e-12);
        }
        for (lp, e) in alm.log_distribution(&[]).into_iter().zip(expected) {
            assert!((lp.exp() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_normalizer_is_zero() {
        let alm = AdaptedLM::identity(uniform_base(7));
        assert!(alm.log_normalizer(&[]).abs() < 1e-9);
        let diff = alm.log_prob_normalized(TokenId(3), &[]) - alm.base().log_prob(TokenId(3), &[]);
        assert!(diff.abs() < 1e-12);
        assert_eq!(alm.log_prob_unnormalized(TokenId(3), &[]), alm.base().log_prob(TokenId(3), &[]));
    }

    #[test]
    fn rejects_length_mismatch() {
        let base = uniform_base(2);
        let err = build_adapted_lm(base, &dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5]), 1.0).unwrap_err();
        assert!(matches!(err, Error::VocabularyMismatch { .. }));
    }

    #[test]
    fn log_sum_exp_stable() {
        let xs = [-1000.0, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
