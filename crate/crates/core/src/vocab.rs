//! Tokenization, corpora and the shared word vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "</s>";

/// Integer id of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    /// Sentence-start padding used in LM histories. Never a vocabulary entry.
    pub const SENTENCE_START: TokenId = TokenId(u32::MAX);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whitespace split with lowercase folding.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// An ordered collection of tokenized utterances.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    utterances: Vec<Vec<String>>,
    token_count: usize,
}

impl Corpus {
    /// Tokenizes each line; blank lines are skipped since an utterance is never empty.
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut corpus = Corpus::default();
        for line in lines {
            corpus.push(tokenize(line.as_ref()));
        }
        corpus
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut corpus = Corpus::default();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
            corpus.push(tokenize(&line));
        }
        Ok(corpus)
    }

    pub fn push(&mut self, tokens: Vec<String>) {
        if tokens.is_empty() {
            return;
        }
        self.token_count += tokens.len();
        self.utterances.push(tokens);
    }

    pub fn utterances(&self) -> &[Vec<String>] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Deterministic split: every `every`-th utterance goes to the held-out part.
    pub fn split_every(&self, every: usize) -> (Corpus, Corpus) {
        let mut train = Corpus::default();
        let mut held_out = Corpus::default();
        for (i, utt) in self.utterances.iter().enumerate() {
            if every > 0 && i % every == every - 1 {
                held_out.push(utt.clone());
            } else {
                train.push(utt.clone());
            }
        }
        (train, held_out)
    }
}

/// Bijection between token strings and ids `0..len`.
///
/// The unknown token is always present. The end-of-sentence token is only
/// present once a language model has claimed the vocabulary as its outcome
/// space (see [`Vocabulary::with_sentence_end`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    unk_id: TokenId,
    eos_id: Option<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit word list. `<unk>` is inserted at
    /// id 0 when absent; duplicates are rejected.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = words.into_iter().map(Into::into).collect();
        if !list.iter().any(|w| w == UNK) {
            list.insert(0, UNK.to_string());
        }
        let mut index = HashMap::with_capacity(list.len());
        for (i, w) in list.iter().enumerate() {
            if index.insert(w.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        let unk_id = index[UNK];
        let eos_id = index.get(EOS).copied();
        Ok(Vocabulary {
            words: list,
            index,
            unk_id,
            eos_id,
        })
    }

    /// Appends the end-of-sentence token if it is not already present.
    pub fn with_sentence_end(mut self) -> Self {
        if self.eos_id.is_none() {
            let id = TokenId(self.words.len() as u32);
            self.words.push(EOS.to_string());
            self.index.insert(EOS.to_string(), id);
            self.eos_id = Some(id);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.eos_id
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.words[id.index()]
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    /// Maps a token to its id, folding out-of-vocabulary tokens to `<unk>`.
    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.get(word).unwrap_or(self.unk_id)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        (0..self.words.len() as u32).map(TokenId)
    }

    /// Short content hash identifying this exact word list and ordering.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Every token with at least `min_count` occurrences, plus `<unk>` at id 0.
/// Ordered by descending count, ties broken lexicographically.
pub fn build_vocabulary(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if min_count == 0 {
        return Err(Error::InvalidParameter("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for utt in corpus.utterances() {
        for tok in utt {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count && w != UNK && w != EOS)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(std::iter::once(UNK).chain(kept.into_iter().map(|(w, _)| w)))
}
