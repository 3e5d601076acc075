//! On-device state: the running kernel-weighted word cache, the personal
//! unigram estimate and the per-round client procedure.

use std::sync::Arc;

use crate::adapt::{build_adapted_lm, interpolate_marginals, AdaptationParams, AdaptedLM};
use crate::error::{Error, Result};
use crate::nbest::{Hypothesis, NBestList};
use crate::ngram::LanguageModel;
use crate::rescore::{rescore_nbest, RescoreConfig, Rescored};
use crate::unigram::UnigramDistribution;

/// Default additive smoothing per vocabulary entry for personal unigrams.
pub const DEFAULT_SMOOTHING_K: f64 = 0.01;

/// Gaussian rank kernel `exp(-(rank - 1)^2 / (2 sigma^2))`.
pub fn kernel_weight(rank: usize, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    if rank == 0 {
        return Err(Error::InvalidParameter("ranks start at 1".into()));
    }
    let d = (rank - 1) as f64;
    Ok((-(d * d) / (2.0 * sigma * sigma)).exp())
}

/// Kernel-weighted word pseudo-counts over every hypothesis seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientCache {
    weighted_counts: Vec<f64>,
    total: f64,
}

impl ClientCache {
    pub fn new(vocab_size: usize) -> Self {
        ClientCache {
            weighted_counts: vec![0.0; vocab_size],
            total: 0.0,
        }
    }

    pub fn weighted_counts(&self) -> &[f64] {
        &self.weighted_counts
    }

    /// The running pseudo-count `c_i`.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Adds `K(s) * count_s(w)` for every hypothesis `s` and word `w`.
    pub fn accumulate_nbest(&mut self, nbest: &NBestList, sigma: f64) -> Result<()> {
        for h in &nbest.hypotheses {
            let k = kernel_weight(h.rank, sigma)?;
            for &w in &h.tokens {
                let len = self.weighted_counts.len();
                let slot = self.weighted_counts.get_mut(w.index()).ok_or(Error::VocabularyMismatch {
                    expected: w.index() + 1,
                    actual: len,
                })?;
                *slot += k;
            }
            self.total += k * h.tokens.len() as f64;
        }
        Ok(())
    }
}

/// `q(w) = (counts[w] + k) / (total + k |V|)` together with `c = total`.
/// An empty cache yields the uniform distribution.
pub fn estimate_personal_unigram(
    cache: &ClientCache,
    smoothing_k: f64,
    vocab_size: usize,
) -> Result<(UnigramDistribution, f64)> {
    if !(smoothing_k > 0.0) {
        return Err(Error::InvalidParameter(format!("smoothing_k must be positive, got {smoothing_k}")));
    }
    if cache.weighted_counts.len() != vocab_size {
        return Err(Error::VocabularyMismatch {
            expected: vocab_size,
            actual: cache.weighted_counts.len(),
        });
    }
    let denom = cache.total + smoothing_k * vocab_size as f64;
    let q = cache
        .weighted_counts
        .iter()
        .map(|&c| (c + smoothing_k) / denom)
        .collect();
    Ok((UnigramDistribution::new(q)?, cache.total))
}

/// Everything a client needs besides its own state to run a round.
#[derive(Clone)]
pub struct RoundContext {
    pub base: Arc<dyn LanguageModel>,
    pub background: UnigramDistribution,
    pub params: AdaptationParams,
    pub sigma: f64,
    pub smoothing_k: f64,
    pub rescore: RescoreConfig,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: String,
    pub cache: ClientCache,
    pub adapted_lm: AdaptedLM,
    /// Latest personal estimate; refreshed after every utterance.
    pub q_personal: UnigramDistribution,
    /// Rounds completed so far.
    pub rounds_completed: usize,
}

impl ClientState {
    pub fn new(client_id: impl Into<String>, base: Arc<dyn LanguageModel>) -> Self {
        let n = base.vocab().len();
        ClientState {
            client_id: client_id.into(),
            cache: ClientCache::new(n),
            adapted_lm: AdaptedLM::identity(base),
            q_personal: UnigramDistribution::uniform(n),
            rounds_completed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientRoundOutput {
    /// End-of-round personal unigram, uploaded to the server.
    pub q: UnigramDistribution,
    /// End-of-round pseudo-count, the averaging weight.
    pub c: f64,
    pub rescored: Vec<Rescored>,
}

impl ClientRoundOutput {
    pub fn selected<'a>(&self, utterances: &'a [NBestList]) -> Vec<&'a Hypothesis> {
        self.rescored
            .iter()
            .zip(utterances)
            .map(|(r, nb)| r.selected(nb))
            .collect()
    }
}

/// One federated round on one device.
///
/// The round's adapted LM is built once from the previous round's global and
/// personal unigrams (or is the base LM when `q_global` is `None`, the first
/// round) and stays fixed while this round's utterances are rescored. Each
/// utterance's N-best list then enters the cache and the personal estimate
/// is refreshed; the estimate at the end of the round is what gets uploaded
/// and what feeds the next round's LM.
pub fn client_round(
    state: &mut ClientState,
    q_global: Option<&UnigramDistribution>,
    utterances: &[NBestList],
    ctx: &RoundContext,
) -> Result<ClientRoundOutput> {
    let n = ctx.base.vocab().len();
    state.adapted_lm = match q_global {
        None => AdaptedLM::identity(ctx.base.clone()),
        Some(_) if ctx.params.is_identity() => AdaptedLM::identity(ctx.base.clone()),
        Some(qg) => {
            let g = interpolate_marginals(&ctx.background, qg, &state.q_personal, &ctx.params)?;
            build_adapted_lm(ctx.base.clone(), &ctx.background, &g, ctx.params.lambda)?
        }
    };

    let mut rescored = Vec::with_capacity(utterances.len());
    for nbest in utterances {
        rescored.push(rescore_nbest(nbest, &state.adapted_lm, &ctx.rescore));
        state.cache.accumulate_nbest(nbest, ctx.sigma)?;
        state.q_personal = estimate_personal_unigram(&state.cache, ctx.smoothing_k, n)?.0;
    }
    let (q, c) = estimate_personal_unigram(&state.cache, ctx.smoothing_k, n)?;
    state.q_personal = q.clone();
    state.rounds_completed += 1;
    Ok(ClientRoundOutput { q, c, rescored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::BackoffNGramLM;
    use crate::vocab::{tokenize, Vocabulary};

    fn vocab() -> Vocabulary {
        Vocabulary::from_words(["a", "b", "c"]).unwrap()
    }

    fn nbest(entries: &[(&str, f64)]) -> NBestList {
        NBestList::from_scored(
            "u",
            entries.iter().map(|(t, s)| (tokenize(t), *s)).collect(),
            &vocab(),
        )
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_weight(1, 0.3).unwrap(), 1.0);
        assert!((kernel_weight(2, 5.0).unwrap() - 0.980_198_67).abs() < 1e-8);
        let tiny = kernel_weight(2, 0.1).unwrap();
        assert!((tiny / (-50f64).exp() - 1.0).abs() < 1e-12);
        assert!(tiny < 2e-22);
        assert!(kernel_weight(1, 0.0).is_err());
        assert!(kernel_weight(1, -1.0).is_err());
    }

    #[test]
    fn single_rank_one_hypothesis() {
        let mut cache = ClientCache::new(4);
        cache.accumulate_nbest(&nbest(&[("a a b", 0.0)]), 5.0).unwrap();
        assert_eq!(cache.weighted_counts(), &[0.0, 2.0, 1.0, 0.0]);
        assert_eq!(cache.total(), 3.0);
    }

    #[test]
    fn two_ranks_kernel_arithmetic() {
        let mut cache = ClientCache::new(4);
        cache.accumulate_nbest(&nbest(&[("a", 0.0), ("b", -1.0)]), 5.0).unwrap();
        let k2 = (-1.0f64 / 50.0).exp();
        assert_eq!(cache.weighted_counts()[1], 1.0);
        assert!((cache.weighted_counts()[2] - 0.980_198_67).abs() < 1e-8);
        assert!((cache.total() - (1.0 + k2)).abs() < 1e-15);
    }

    #[test]
    fn empty_cache_is_uniform() {
        let (q, c) = estimate_personal_unigram(&ClientCache::new(4), 0.01, 4).unwrap();
        assert_eq!(q.probs(), &[0.25; 4]);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn smoothing_hand_arithmetic() {
        let cache = ClientCache {
            weighted_counts: vec![3.0, 1.0, 0.0, 0.0],
            total: 4.0,
        };
        let (q, c) = estimate_personal_unigram(&cache, 1.0, 4).unwrap();
        assert_eq!(q.probs(), &[4.0 / 8.0, 2.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0]);
        assert_eq!(c, 4.0);
    }

    #[test]
    fn first_round_uses_base_lm() {
        let base: Arc<dyn LanguageModel> = Arc::new(BackoffNGramLM::uniform(vocab().with_sentence_end()));
        let ctx = RoundContext {
            base: base.clone(),
            background: UnigramDistribution::new(vec![0.1, 0.2, 0.3, 0.2, 0.2]).unwrap(),
            params: AdaptationParams::new(2.0, 0.5, 0.25).unwrap(),
            sigma: 5.0,
            smoothing_k: 0.01,
            rescore: RescoreConfig::default(),
        };
        let mut state = ClientState::new("c", base);
        let out = client_round(&mut state, None, &[nbest(&[("a", 0.0), ("b c", -1.0)])], &ctx).unwrap();
        assert!(state.adapted_lm.is_identity());
        assert_eq!(out.c, state.cache.total());
        assert_eq!(state.rounds_completed, 1);

        // next round adapts
        let qg = UnigramDistribution::uniform(5);
        client_round(&mut state, Some(&qg), &[nbest(&[("a", 0.0)])], &ctx).unwrap();
        assert!(!state.adapted_lm.is_identity());
    }
}
