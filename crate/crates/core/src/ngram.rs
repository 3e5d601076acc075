//! Absolute-discounting backoff n-gram model used as the base LM.
//!
//! For an observed context `h` with total count `c(h)` and `n(h)` distinct
//! successors:
//!
//! ```text
//! p(w | h) = max(c(h, w) - D, 0) / c(h) + bow(h) * p(w | h')
//! bow(h)   = D * n(h) / c(h)
//! ```
//!
//! where `h'` drops the oldest token of `h`. Unobserved contexts back off
//! with weight 1, and the empty context backs off to the uniform
//! distribution over the vocabulary. Every context therefore normalizes
//! exactly and every word keeps a strictly positive probability.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::vocab::{Corpus, TokenId, Vocabulary};

pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const MAX_ORDER: usize = 5;
const MAGIC: &str = "FMPLM1";

/// A conditional distribution `p(w | h)` over a fixed vocabulary.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn order(&self) -> usize;

    /// Natural-log probability of `word` after `history`. Only the last
    /// `order - 1` history tokens are consulted; callers pad sentence starts
    /// with [`TokenId::SENTENCE_START`].
    fn log_prob(&self, word: TokenId, history: &[TokenId]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
struct ContextEntry {
    total: u64,
    bow: f64,
    /// word -> (raw count, discounted relative frequency)
    seen: HashMap<TokenId, (u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackoffNGramLM {
    order: usize,
    discount: f64,
    vocab: Vocabulary,
    /// `levels[k]` holds contexts of exactly `k` tokens.
    levels: Vec<HashMap<Vec<TokenId>, ContextEntry>>,
}

type RawCounts = Vec<BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>>>;

/// Trains a model of the given order with the default discount.
pub fn train_ngram(corpus: &Corpus, vocab: &Vocabulary, order: usize) -> Result<BackoffNGramLM> {
    BackoffNGramLM::train(corpus, vocab, order, DEFAULT_DISCOUNT)
}

impl BackoffNGramLM {
    pub fn train(corpus: &Corpus, vocab: &Vocabulary, order: usize, discount: f64) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::OrderOutOfRange(order));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidParameter(format!("discount {discount} not in (0, 1)")));
        }
        let vocab = vocab.clone().with_sentence_end();
        let eos = vocab.eos_id().expect("sentence end present");
        let mut counts: RawCounts = vec![BTreeMap::new(); order];

        let mut padded: Vec<TokenId> = Vec::new();
        for utt in corpus.utterances() {
            padded.clear();
            padded.extend(std::iter::repeat_n(TokenId::SENTENCE_START, order - 1));
            padded.extend(utt.iter().map(|t| vocab.id_or_unk(t)));
            padded.push(eos);
            for pos in (order - 1)..padded.len() {
                let word = padded[pos];
                for (k, level) in counts.iter_mut().enumerate() {
                    let ctx = padded[pos - k..pos].to_vec();
                    *level.entry(ctx).or_default().entry(word).or_default() += 1;
                }
            }
        }
        Ok(Self::from_counts(order, discount, vocab, &counts))
    }

    /// A unigram model assigning `1/|V|` to every entry of `vocab`.
    pub fn uniform(vocab: Vocabulary) -> Self {
        BackoffNGramLM {
            order: 1,
            discount: DEFAULT_DISCOUNT,
            vocab,
            levels: vec![HashMap::new()],
        }
    }

    fn from_counts(order: usize, discount: f64, vocab: Vocabulary, counts: &RawCounts) -> Self {
        let levels = counts
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|(ctx, words)| {
                        let total: u64 = words.values().sum();
                        let t = total as f64;
                        let seen = words
                            .iter()
                            .map(|(&w, &c)| (w, (c, (c as f64 - discount).max(0.0) / t)))
                            .collect();
                        let entry = ContextEntry {
                            total,
                            bow: discount * words.len() as f64 / t,
                            seen,
                        };
                        (ctx.clone(), entry)
                    })
                    .collect()
            })
            .collect();
        BackoffNGramLM {
            order,
            discount,
            vocab,
            levels,
        }
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Probability (not log) of `word` given a context of at most `order - 1` tokens.
    pub fn prob(&self, word: TokenId, history: &[TokenId]) -> f64 {
        let keep = history.len().min(self.order - 1);
        self.prob_in_context(word, &history[history.len() - keep..])
    }

    fn prob_in_context(&self, word: TokenId, ctx: &[TokenId]) -> f64 {
        let lower = if ctx.is_empty() {
            1.0 / self.vocab.len() as f64
        } else {
            self.prob_in_context(word, &ctx[1..])
        };
        match self.levels[ctx.len()].get(ctx) {
            None => lower,
            Some(entry) => {
                let direct = entry.seen.get(&word).map_or(0.0, |&(_, d)| d);
                direct + entry.bow * lower
            }
        }
    }

    /// Every context observed in training, shortest first.
    pub fn contexts(&self) -> Vec<Vec<TokenId>> {
        let mut out: Vec<Vec<TokenId>> = self
            .levels
            .iter()
            .flat_map(|level| level.keys().cloned())
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        if out.is_empty() {
            out.push(Vec::new());
        }
        out
    }

    /// Raw n-gram counts, deterministic order.
    fn raw_counts(&self) -> RawCounts {
        self.levels
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|(ctx, e)| {
                        let words = e.seen.iter().map(|(&w, &(c, _))| (w, c)).collect();
                        (ctx.clone(), words)
                    })
                    .collect()
            })
            .collect()
    }

    /// Per-token perplexity over a corpus, end-of-sentence events included.
    pub fn perplexity(&self, corpus: &Corpus) -> f64 {
        let eos = self.vocab.eos_id().expect("trained models carry a sentence end");
        let mut total = 0.0;
        let mut n = 0usize;
        let mut history = Vec::new();
        for utt in corpus.utterances() {
            history.clear();
            history.extend(std::iter::repeat_n(TokenId::SENTENCE_START, self.order - 1));
            for w in utt.iter().map(|t| self.vocab.id_or_unk(t)).chain(std::iter::once(eos)) {
                total += self.log_prob(w, &history);
                n += 1;
                history.push(w);
            }
        }
        (-total / n.max(1) as f64).exp()
    }

    /// Writes the versioned text artifact. The format stores raw counts so a
    /// reload rebuilds a bit-identical model.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "order {}", self.order)?;
        writeln!(out, "discount {}", self.discount)?;
        writeln!(out, "vocab {}", self.vocab.len())?;
        for w in self.vocab.words() {
            writeln!(out, "{w}")?;
        }
        let counts = self.raw_counts();
        let n: usize = counts.iter().map(|l| l.values().map(BTreeMap::len).sum::<usize>()).sum();
        writeln!(out, "ngrams {n}")?;
        for level in &counts {
            for (ctx, words) in level {
                let ctx_str = if ctx.is_empty() {
                    "-".to_string()
                } else {
                    ctx.iter().map(|&t| fmt_history_token(t)).collect::<Vec<_>>().join(",")
                };
                for (w, c) in words {
                    writeln!(out, "{ctx_str} {w} {c}")?;
                }
            }
        }
        Ok(())
    }

    /// Reads a model written by [`BackoffNGramLM::write_to`].
    pub fn read_from<R: BufRead>(lines: &mut LineReader<R>) -> Result<Self> {
        let magic = lines.next_line()?;
        if magic != MAGIC {
            return Err(lines.error(format!("bad magic {magic:?}, expected {MAGIC}")));
        }
        let order: usize = lines.keyed("order")?;
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::OrderOutOfRange(order));
        }
        let discount: f64 = lines.keyed("discount")?;
        let vocab_len: usize = lines.keyed("vocab")?;
        let mut words = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            words.push(lines.next_line()?);
        }
        let vocab = Vocabulary::from_words(words).map_err(|e| lines.error(e.to_string()))?;
        if vocab.len() != vocab_len {
            return Err(lines.error("vocabulary is missing <unk>".to_string()));
        }
        let n: usize = lines.keyed("ngrams")?;
        let mut counts: RawCounts = vec![BTreeMap::new(); order];
        for _ in 0..n {
            let line = lines.next_line()?;
            let mut parts = line.split(' ');
            let (Some(ctx), Some(w), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(lines.error(format!("malformed n-gram line {line:?}")));
            };
            let ctx: Vec<TokenId> = if ctx == "-" {
                Vec::new()
            } else {
                ctx.split(',')
                    .map(|t| parse_history_token(t, vocab_len))
                    .collect::<Option<_>>()
                    .ok_or_else(|| lines.error(format!("bad context {ctx:?}")))?
            };
            let w: u32 = w.parse().map_err(|_| lines.error(format!("bad word id {w:?}")))?;
            let c: u64 = c.parse().map_err(|_| lines.error(format!("bad count {c:?}")))?;
            if w as usize >= vocab_len || ctx.len() >= order || c == 0 {
                return Err(lines.error(format!("n-gram out of range: {line:?}")));
            }
            counts[ctx.len()].entry(ctx).or_default().insert(TokenId(w), c);
        }
        Ok(Self::from_counts(order, discount, vocab, &counts))
    }
}

fn fmt_history_token(t: TokenId) -> String {
    if t == TokenId::SENTENCE_START {
        "<s>".to_string()
    } else {
        t.0.to_string()
    }
}

fn parse_history_token(s: &str, vocab_len: usize) -> Option<TokenId> {
    if s == "<s>" {
        return Some(TokenId::SENTENCE_START);
    }
    let id: u32 = s.parse().ok()?;
    ((id as usize) < vocab_len).then_some(TokenId(id))
}

impl LanguageModel for BackoffNGramLM {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn order(&self) -> usize {
        self.order
    }

    fn log_prob(&self, word: TokenId, history: &[TokenId]) -> f64 {
        self.prob(word, history).ln()
    }
}

/// Line-oriented reader that tracks position for error messages.
pub struct LineReader<R> {
    inner: R,
    path: String,
    line: usize,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R, path: impl Into<String>) -> Self {
        LineReader {
            inner,
            path: path.into(),
            line: 0,
        }
    }

    pub fn error(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            message,
        }
    }

    pub fn next_line(&mut self) -> Result<String> {
        let mut buf = String::new();
        self.line += 1;
        let n = self
            .inner
            .read_line(&mut buf)
            .map_err(|e| self.error(e.to_string()))?;
        if n == 0 {
            return Err(self.error("unexpected end of file".into()));
        }
        Ok(buf.trim_end_matches(['\n', '\r']).to_string())
    }

    /// Reads a `key value` line.
    pub fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next_line()?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.error(format!("expected `{key} <value>`, got {line:?}")))?;
        value
            .parse()
            .map_err(|_| self.error(format!("bad value for {key}: {value:?}")))
    }

    /// True if at least one more line is available.
    pub fn has_more(&mut self) -> Result<bool> {
        match self.inner.fill_buf() {
            Ok(buf) => Ok(!buf.is_empty()),
            Err(e) => Err(self.error(e.to_string())),
        }
    }
}
