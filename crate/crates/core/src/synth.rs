//! Synthetic stand-in for first-pass recognition.
//!
//! A [`SyntheticWorld`] holds a background corpus drawn from a sparse Markov
//! chain over general words, plus per-client reference streams that mix the
//! same general language with a shared trending lexicon and a small private
//! topic lexicon per client. Domain words are rare in the background corpus,
//! so the base LM under-predicts them; every domain word has an acoustically
//! confusable general partner, and the N-best generator substitutes along
//! those pairs in both directions.

use std::collections::HashMap;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nbest::{ClientStream, Fleet, NBestList, Utterance};
use crate::ngram::BackoffNGramLM;
use crate::rng::{stream_rng, STREAM_NBEST, STREAM_WORLD};
use crate::unigram::{estimate_background_unigram, UnigramDistribution};
use crate::vocab::{build_vocabulary, Corpus, Vocabulary, EOS, UNK};
use crate::wer::wer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticNoiseModel {
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
    /// Probability that a substitution uses a confusable partner when one exists.
    pub confusion_bias: f64,
    /// Hypotheses per utterance.
    pub n_best: usize,
    /// First-pass score penalty per edit against the reference.
    pub score_per_error: f64,
    /// Standard deviation of Gaussian first-pass score noise.
    pub score_noise: f64,
}

impl Default for SyntheticNoiseModel {
    fn default() -> Self {
        SyntheticNoiseModel {
            sub_rate: 0.08,
            ins_rate: 0.01,
            del_rate: 0.01,
            confusion_bias: 0.8,
            n_best: 10,
            score_per_error: 1.0,
            score_noise: 1.0,
        }
    }
}

impl SyntheticNoiseModel {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.sub_rate, self.ins_rate, self.del_rate];
        if rates.iter().any(|r| !(0.0..1.0).contains(r)) || self.sub_rate + self.ins_rate + self.del_rate >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "noise rates must lie in [0, 1) and sum below 1 (got {:?})",
                rates
            )));
        }
        if !(0.0..=1.0).contains(&self.confusion_bias) {
            return Err(Error::InvalidParameter("confusion_bias must lie in [0, 1]".into()));
        }
        if self.n_best == 0 {
            return Err(Error::InvalidParameter("n_best must be at least 1".into()));
        }
        if !(self.score_noise >= 0.0) || !(self.score_per_error >= 0.0) {
            return Err(Error::InvalidParameter("score parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Confusable-word pairs used to bias substitutions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionMap {
    partners: HashMap<String, Vec<String>>,
}

impl ConfusionMap {
    pub fn add_pair(&mut self, a: &str, b: &str) {
        self.partners.entry(a.to_string()).or_default().push(b.to_string());
        self.partners.entry(b.to_string()).or_default().push(a.to_string());
    }

    pub fn partners(&self, word: &str) -> &[String] {
        self.partners.get(word).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorruptionStats {
    pub tokens: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Per-token corruption: each reference token is substituted with
/// probability `sub_rate`, deleted with `del_rate`, and independently
/// followed by a random insertion with `ins_rate`.
pub fn corrupt<R: Rng + ?Sized>(
    reference: &[String],
    model: &SyntheticNoiseModel,
    pool: &[String],
    confusions: &ConfusionMap,
    rng: &mut R,
) -> (Vec<String>, CorruptionStats) {
    let mut out = Vec::with_capacity(reference.len() + 2);
    let mut stats = CorruptionStats {
        tokens: reference.len(),
        ..Default::default()
    };
    for tok in reference {
        let u: f64 = rng.random();
        if u < model.sub_rate {
            out.push(substitute(tok, model, pool, confusions, rng));
            stats.substitutions += 1;
        } else if u < model.sub_rate + model.del_rate {
            stats.deletions += 1;
        } else {
            out.push(tok.clone());
        }
        if rng.random::<f64>() < model.ins_rate {
            out.push(pool.choose(rng).expect("non-empty pool").clone());
            stats.insertions += 1;
        }
    }
    (out, stats)
}

fn substitute<R: Rng + ?Sized>(
    tok: &str,
    model: &SyntheticNoiseModel,
    pool: &[String],
    confusions: &ConfusionMap,
    rng: &mut R,
) -> String {
    let partners = confusions.partners(tok);
    if !partners.is_empty() && rng.random::<f64>() < model.confusion_bias {
        return partners.choose(rng).expect("non-empty").clone();
    }
    loop {
        let w = pool.choose(rng).expect("non-empty pool");
        if w != tok || pool.len() == 1 {
            return w.clone();
        }
    }
}

/// One near-reference candidate (the reference itself) plus `n_best - 1`
/// independently corrupted variants. First-pass scores fall with edit
/// distance to the reference and carry Gaussian noise, so the reference is
/// not guaranteed to rank first.
pub fn generate_synthetic_nbest<R: Rng + ?Sized>(
    utterance_id: &str,
    reference: &[String],
    model: &SyntheticNoiseModel,
    confusions: &ConfusionMap,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<NBestList> {
    model.validate()?;
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let pool: Vec<String> = vocab
        .words()
        .iter()
        .filter(|w| w.as_str() != UNK && w.as_str() != EOS)
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(Error::InvalidParameter("vocabulary has no ordinary words".into()));
    }
    let noise = Normal::new(0.0, model.score_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut candidates = Vec::with_capacity(model.n_best);
    for i in 0..model.n_best {
        let mut words = if i == 0 {
            reference.to_vec()
        } else {
            corrupt(reference, model, &pool, confusions, rng).0
        };
        if words.is_empty() {
            words.push(pool.choose(rng).expect("non-empty").clone());
        }
        let (_, counts) = wer(reference, &words)?;
        let score = -model.score_per_error * counts.errors() as f64 + noise.sample(rng);
        candidates.push((words, score));
    }
    NBestList::from_scored(utterance_id, candidates, vocab)
}

/// Parameters of a synthetic fleet and its background corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetSpec {
    pub clients: usize,
    pub utterances_per_client: usize,
    /// Size of the general-language lexicon.
    pub general_words: usize,
    /// Shared in-domain lexicon used by every client.
    pub trending_words: usize,
    /// Private topic lexicon size per client.
    pub topic_words: usize,
    /// Per-token probability of a client topic word in client speech.
    pub topic_rate: f64,
    /// Per-token probability of a trending word in client speech.
    pub trending_rate: f64,
    pub background_sentences: usize,
    /// Occurrences of each domain word planted in the background corpus.
    pub background_domain_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Preferred successors per general word in the Markov chain.
    pub successors: usize,
    pub successor_prob: f64,
    pub zipf_exponent: f64,
    pub noise: SyntheticNoiseModel,
    pub lm_order: usize,
    pub min_count: usize,
    pub background_smoothing_k: f64,
    pub seed: u64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            clients: 20,
            utterances_per_client: 60,
            general_words: 400,
            trending_words: 80,
            topic_words: 8,
            topic_rate: 0.12,
            trending_rate: 0.12,
            background_sentences: 4000,
            background_domain_count: 2,
            min_len: 5,
            max_len: 12,
            successors: 4,
            successor_prob: 0.6,
            zipf_exponent: 1.0,
            noise: SyntheticNoiseModel::default(),
            lm_order: 3,
            min_count: 1,
            background_smoothing_k: 0.01,
            seed: 1,
        }
    }
}

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.clients == 0 || self.utterances_per_client == 0 {
            return bad("fleet needs at least one client and one utterance per client");
        }
        if self.general_words < 2 || self.successors == 0 {
            return bad("general lexicon needs at least two words and one successor");
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return bad("utterance lengths must satisfy 1 <= min_len <= max_len");
        }
        let rates = [self.topic_rate, self.trending_rate, self.successor_prob];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || self.topic_rate + self.trending_rate > 1.0 {
            return bad("rates must lie in [0, 1] with topic_rate + trending_rate <= 1");
        }
        if (self.topic_rate > 0.0 && self.topic_words == 0) || (self.trending_rate > 0.0 && self.trending_words == 0) {
            return bad("a positive domain rate needs a non-empty lexicon");
        }
        if self.background_sentences == 0 {
            return bad("background corpus must be non-empty");
        }
        if !(self.background_smoothing_k > 0.0) {
            return bad("background_smoothing_k must be positive");
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientScript {
    pub client_id: String,
    pub topic_words: Vec<String>,
    /// Reference transcripts in temporal order.
    pub references: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: FleetSpec,
    pub seed: u64,
    pub background: Corpus,
    pub trending_words: Vec<String>,
    pub clients: Vec<ClientScript>,
    pub confusions: ConfusionMap,
}

struct MarkovChain {
    words: Vec<String>,
    zipf: WeightedIndex<f64>,
    successors: Vec<Vec<usize>>,
    successor_prob: f64,
}

impl MarkovChain {
    fn new<R: Rng + ?Sized>(spec: &FleetSpec, rng: &mut R) -> Result<Self> {
        let words: Vec<String> = (0..spec.general_words).map(|i| format!("g{i:03}")).collect();
        let weights: Vec<f64> = (0..words.len())
            .map(|i| 1.0 / ((i + 1) as f64).powf(spec.zipf_exponent))
            .collect();
        let zipf = WeightedIndex::new(weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let successors = (0..words.len())
            .map(|_| (0..spec.successors).map(|_| zipf.sample(rng)).collect())
            .collect();
        Ok(MarkovChain {
            words,
            zipf,
            successors,
            successor_prob: spec.successor_prob,
        })
    }

    fn sentence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<String> {
        let mut out = Vec::with_capacity(len);
        let mut cur = self.zipf.sample(rng);
        out.push(self.words[cur].clone());
        while out.len() < len {
            cur = if rng.random::<f64>() < self.successor_prob {
                *self.successors[cur].choose(rng).expect("successors")
            } else {
                self.zipf.sample(rng)
            };
            out.push(self.words[cur].clone());
        }
        out
    }
}

fn zipf_index(n: usize, exponent: f64) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new((0..n).map(|i| 1.0 / ((i + 1) as f64).powf(exponent)))
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

impl SyntheticWorld {
    /// Deterministic in `(spec, seed)`.
    pub fn generate(spec: &FleetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, STREAM_WORLD);
        let chain = MarkovChain::new(spec, &mut rng)?;

        let trending_words: Vec<String> = (0..spec.trending_words).map(|i| format!("t{i:03}")).collect();
        let clients_topics: Vec<Vec<String>> = (0..spec.clients)
            .map(|c| (0..spec.topic_words).map(|k| format!("c{c:02}k{k:02}")).collect())
            .collect();

        // Partners come from the less frequent half of the general lexicon.
        let mut confusions = ConfusionMap::default();
        let lo = spec.general_words / 4;
        let hi = spec.general_words;
        for w in trending_words.iter().chain(clients_topics.iter().flatten()) {
            let partner = &chain.words[rng.random_range(lo..hi)];
            confusions.add_pair(w, partner);
        }

        let mut background = Corpus::default();
        let mut sentences: Vec<Vec<String>> = (0..spec.background_sentences)
            .map(|_| {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                chain.sentence(len, &mut rng)
            })
            .collect();
        for w in trending_words.iter().chain(clients_topics.iter().flatten()) {
            for _ in 0..spec.background_domain_count {
                let s = rng.random_range(0..sentences.len());
                let pos = rng.random_range(0..sentences[s].len());
                sentences[s][pos] = w.clone();
            }
        }
        for s in sentences {
            background.push(s);
        }

        let trend_dist = if spec.trending_words > 0 {
            Some(zipf_index(spec.trending_words, 0.5)?)
        } else {
            None
        };
        let topic_dist = if spec.topic_words > 0 {
            Some(zipf_index(spec.topic_words, 0.5)?)
        } else {
            None
        };
        let clients = clients_topics
            .into_iter()
            .enumerate()
            .map(|(c, topic_words)| {
                let references = (0..spec.utterances_per_client)
                    .map(|_| {
                        let len = rng.random_range(spec.min_len..=spec.max_len);
                        let mut s = chain.sentence(len, &mut rng);
                        for tok in s.iter_mut() {
                            let u: f64 = rng.random();
                            if u < spec.topic_rate {
                                let d = topic_dist.as_ref().expect("topic lexicon");
                                *tok = topic_words[d.sample(&mut rng)].clone();
                            } else if u < spec.topic_rate + spec.trending_rate {
                                let d = trend_dist.as_ref().expect("trending lexicon");
                                *tok = trending_words[d.sample(&mut rng)].clone();
                            }
                        }
                        s
                    })
                    .collect();
                ClientScript {
                    client_id: format!("client{c:02}"),
                    topic_words,
                    references,
                }
            })
            .collect();

        Ok(SyntheticWorld {
            spec: spec.clone(),
            seed,
            background,
            trending_words,
            clients,
            confusions,
        })
    }

    /// The vocabulary a background LM trained on this world would use.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Ok(build_vocabulary(&self.background, self.spec.min_count)?.with_sentence_end())
    }

    /// Draws N-best lists for every client utterance from a dedicated stream.
    pub fn fleet(&self, vocab: &Vocabulary) -> Result<Fleet> {
        let mut rng = stream_rng(self.seed, STREAM_NBEST);
        self.clients
            .iter()
            .map(|script| {
                let utterances = script
                    .references
                    .iter()
                    .enumerate()
                    .map(|(i, reference)| {
                        let utterance_id = format!("{}-u{i:03}", script.client_id);
                        let nbest = generate_synthetic_nbest(
                            &utterance_id,
                            reference,
                            &self.spec.noise,
                            &self.confusions,
                            vocab,
                            &mut rng,
                        )?;
                        Ok(Utterance {
                            utterance_id,
                            client_id: script.client_id.clone(),
                            seq: i as u64,
                            reference: reference.clone(),
                            nbest,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ClientStream {
                    client_id: script.client_id.clone(),
                    utterances,
                })
            })
            .collect()
    }
}

/// A ready-to-run benchmark: background LM, background unigram and fleet.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub lm: Arc<BackoffNGramLM>,
    pub background: UnigramDistribution,
    pub fleet: Fleet,
}

impl SyntheticBenchmark {
    pub fn build(spec: &FleetSpec, seed: u64) -> Result<Self> {
        let world = SyntheticWorld::generate(spec, seed)?;
        let vocab = world.vocabulary()?;
        let lm = BackoffNGramLM::train(&world.background, &vocab, spec.lm_order, crate::ngram::DEFAULT_DISCOUNT)?;
        let background = estimate_background_unigram(&world.background, &vocab, spec.background_smoothing_k)?;
        let fleet = world.fleet(&vocab)?;
        Ok(SyntheticBenchmark {
            lm: Arc::new(lm),
            background,
            fleet,
        })
    }
}
