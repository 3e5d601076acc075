//! Second-pass N-best rescoring.

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptedLM;
use crate::error::{Error, Result};
use crate::nbest::{Hypothesis, NBestList};
use crate::ngram::{BackoffNGramLM, LanguageModel};
use crate::vocab::TokenId;

/// Anything that assigns a per-word log score given a history.
pub trait WordScorer {
    fn order(&self) -> usize;
    fn eos(&self) -> Option<TokenId>;
    fn word_score(&self, word: TokenId, history: &[TokenId]) -> f64;
}

impl WordScorer for BackoffNGramLM {
    fn order(&self) -> usize {
        LanguageModel::order(self)
    }

    fn eos(&self) -> Option<TokenId> {
        self.vocab().eos_id()
    }

    fn word_score(&self, word: TokenId, history: &[TokenId]) -> f64 {
        self.log_prob(word, history)
    }
}

/// Adapted models score with the unnormalized factor-scaled probability.
impl WordScorer for AdaptedLM {
    fn order(&self) -> usize {
        self.base().order()
    }

    fn eos(&self) -> Option<TokenId> {
        self.base().vocab().eos_id()
    }

    fn word_score(&self, word: TokenId, history: &[TokenId]) -> f64 {
        self.log_prob_unnormalized(word, history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescoreConfig {
    /// Weight on the LM score; `1 - lm_weight` goes to the first-pass score.
    pub lm_weight: f64,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig { lm_weight: 0.5 }
    }
}

impl RescoreConfig {
    pub fn new(lm_weight: f64) -> Result<Self> {
        let cfg = RescoreConfig { lm_weight };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.lm_weight) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("lm_weight {} not in [0, 1]", self.lm_weight)))
        }
    }
}

/// Sum of word scores with sentence-start padding and a closing sentence end.
pub fn lm_sentence_score<S: WordScorer + ?Sized>(scorer: &S, tokens: &[TokenId]) -> f64 {
    let pad = scorer.order().saturating_sub(1);
    let mut history = Vec::with_capacity(pad + tokens.len());
    history.extend(std::iter::repeat_n(TokenId::SENTENCE_START, pad));
    let mut score = 0.0;
    for &w in tokens.iter().chain(scorer.eos().as_ref()) {
        score += scorer.word_score(w, &history);
        history.push(w);
    }
    score
}

pub fn combine_scores(first_pass: f64, lm: f64, cfg: &RescoreConfig) -> f64 {
    (1.0 - cfg.lm_weight) * first_pass + cfg.lm_weight * lm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredHypothesis {
    /// Position in the input list.
    pub index: usize,
    pub rank: usize,
    pub first_pass: f64,
    pub lm: f64,
    pub combined: f64,
}

/// A rescored list, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescored {
    pub ranking: Vec<ScoredHypothesis>,
}

impl Rescored {
    pub fn winner(&self) -> &ScoredHypothesis {
        &self.ranking[0]
    }

    pub fn selected<'a>(&self, nbest: &'a NBestList) -> &'a Hypothesis {
        &nbest.hypotheses[self.winner().index]
    }
}

/// Orders hypotheses by descending combined score; ties go to the lower
/// first-pass rank.
pub fn rescore_nbest<S: WordScorer + ?Sized>(nbest: &NBestList, scorer: &S, cfg: &RescoreConfig) -> Rescored {
    let mut ranking: Vec<ScoredHypothesis> = nbest
        .hypotheses
        .iter()
        .enumerate()
        .map(|(index, h)| {
            let lm = lm_sentence_score(scorer, &h.tokens);
            ScoredHypothesis {
                index,
                rank: h.rank,
                first_pass: h.first_pass_score,
                lm,
                combined: combine_scores(h.first_pass_score, lm, cfg),
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.combined.total_cmp(&a.combined).then(a.rank.cmp(&b.rank)));
    Rescored { ranking }
}

/// Debug trace of one rescoring decision, one JSON line per utterance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RescoreTrace {
    pub utterance_id: String,
    pub hypotheses: Vec<ScoredHypothesis>,
    pub winner: usize,
}

impl RescoreTrace {
    pub fn new(nbest: &NBestList, rescored: &Rescored) -> Self {
        let mut hypotheses = rescored.ranking.clone();
        hypotheses.sort_by_key(|h| h.index);
        RescoreTrace {
            utterance_id: nbest.utterance_id.clone(),
            hypotheses,
            winner: rescored.winner().rank,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{build_adapted_lm, AdaptedLM};
    use crate::unigram::UnigramDistribution;
    use crate::vocab::{tokenize, Corpus, Vocabulary};
    use std::sync::Arc;

    fn uniform_with_eos() -> Arc<BackoffNGramLM> {
        // <unk> a b </s>
        Arc::new(BackoffNGramLM::uniform(
            Vocabulary::from_words(["a", "b"]).unwrap().with_sentence_end(),
        ))
    }

    #[test]
    fn single_token_uniform() {
        let lm = uniform_with_eos();
        let score = lm_sentence_score(lm.as_ref(), &[TokenId(1)]);
        assert!((score - 2.0 * 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn factor_two_adds_len_ln2() {
        let lm = uniform_with_eos();
        let alm = AdaptedLM::from_log_factor(lm.clone(), vec![2f64.ln(); 4]).unwrap();
        let toks = [TokenId(1), TokenId(2), TokenId(1)];
        let base = lm_sentence_score(lm.as_ref(), &toks);
        let adapted = lm_sentence_score(&alm, &toks);
        // three words plus the sentence end
        assert!((adapted - (base + 4.0 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn bigram_scores_are_order_sensitive() {
        let corpus = Corpus::from_lines(["a b", "a b", "a b", "b"]);
        let vocab = crate::vocab::build_vocabulary(&corpus, 1).unwrap();
        let lm = crate::ngram::train_ngram(&corpus, &vocab, 2).unwrap();
        let a = lm.vocab().get("a").unwrap();
        let b = lm.vocab().get("b").unwrap();
        let forward = lm_sentence_score(&lm, &[a, b]);
        let backward = lm_sentence_score(&lm, &[b, a]);
        let brute = |x: TokenId, y: TokenId| {
            let s = TokenId::SENTENCE_START;
            lm.log_prob(x, &[s]) + lm.log_prob(y, &[x]) + lm.log_prob(lm.vocab().eos_id().unwrap(), &[y])
        };
        assert!((forward - brute(a, b)).abs() < 1e-12);
        assert!((backward - brute(b, a)).abs() < 1e-12);
        assert!(forward > backward);
    }

    #[test]
    fn combine_hand_cases() {
        let half = RescoreConfig::new(0.5).unwrap();
        assert_eq!(combine_scores(-10.0, -20.0, &half), -15.0);
        assert_eq!(combine_scores(-10.0, -20.0, &RescoreConfig::new(0.0).unwrap()), -10.0);
        assert_eq!(combine_scores(-10.0, -20.0, &RescoreConfig::new(1.0).unwrap()), -20.0);
        assert!(RescoreConfig::new(1.5).is_err());
    }

    fn list(vocab: &Vocabulary, entries: &[(&str, f64)]) -> NBestList {
        NBestList::from_scored(
            "u",
            entries.iter().map(|(t, s)| (tokenize(t), *s)).collect(),
            vocab,
        )
        .unwrap()
    }

    #[test]
    fn zero_lm_weight_keeps_first_pass_winner() {
        let lm = uniform_with_eos();
        let nb = list(lm.vocab(), &[("a a a a", -1.0), ("b", -1.5)]);
        let r = rescore_nbest(&nb, lm.as_ref(), &RescoreConfig::new(0.0).unwrap());
        assert_eq!(r.winner().rank, 1);
    }

    #[test]
    fn ties_go_to_lower_rank() {
        let lm = uniform_with_eos();
        let nb = list(lm.vocab(), &[("a", -1.0), ("b", -1.0)]);
        let r = rescore_nbest(&nb, lm.as_ref(), &RescoreConfig::default());
        assert_eq!(r.ranking.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn personalization_flips_winner() {
        // uniform base over <unk> a b </s>; "b" is client-frequent with
        // g(b)/u(b) = 4, "a" has g(a)/u(a) = 0.5, lambda = 1.
        // baseline:  A="b" -2.0, B="a" -1.0, equal lm terms -> B by 0.5
        // adapted:   A - B = 0.5 * (-1) + 0.5 * (ln 4 - ln 0.5) = 0.54 -> A
        let lm = uniform_with_eos();
        let u = UnigramDistribution::new(vec![0.1, 0.4, 0.1, 0.4]).unwrap();
        let g = UnigramDistribution::new(vec![0.1, 0.2, 0.4, 0.3]).unwrap();
        let alm = build_adapted_lm(lm.clone(), &u, &g, 1.0).unwrap();
        let b = lm.vocab().get("b").unwrap().index();
        assert!((alm.log_factor()[b].exp() - 4.0).abs() < 1e-12);

        let nb = list(lm.vocab(), &[("a", -1.0), ("b", -2.0)]);
        let cfg = RescoreConfig::default();
        let base = rescore_nbest(&nb, lm.as_ref(), &cfg);
        let adapted = rescore_nbest(&nb, &alm, &cfg);
        assert_eq!(base.selected(&nb).words, vec!["a"]);
        assert_eq!(adapted.selected(&nb).words, vec!["b"]);

        // summation check of the adapted combined score for "b"
        let expect = 0.5 * -2.0 + 0.5 * (2.0 * 0.25f64.ln() + 4f64.ln() + 0.75f64.ln());
        let got = adapted.ranking.iter().find(|h| h.rank == 2).unwrap().combined;
        assert!((got - expect).abs() < 1e-12);
        let margin = adapted.ranking[0].combined - adapted.ranking[1].combined;
        assert!((margin - (-0.5 + 0.5 * (4f64.ln() - 0.5f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn trace_lists_hypotheses_in_input_order() {
        let lm = uniform_with_eos();
        let nb = list(lm.vocab(), &[("a", -1.0), ("b b", -0.5)]);
        let r = rescore_nbest(&nb, lm.as_ref(), &RescoreConfig::default());
        let trace = RescoreTrace::new(&nb, &r);
        assert_eq!(trace.hypotheses[0].index, 0);
        assert_eq!(trace.winner, r.winner().rank);
    }
}
