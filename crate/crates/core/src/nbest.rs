//! N-best lists and the per-utterance fleet records that carry them.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{tokenize, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// `words` resolved against the LM vocabulary, OOV folded to `<unk>`.
    pub tokens: Vec<TokenId>,
    /// 1-based position in the first-pass list.
    pub rank: usize,
    pub first_pass_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utterance_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    /// Sorts candidates by descending first-pass score (stable, so ties keep
    /// input order) and assigns ranks `1..=N`.
    pub fn from_scored(
        utterance_id: impl Into<String>,
        candidates: Vec<(Vec<String>, f64)>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        let invalid = |reason: String| Error::InvalidNBest {
            utterance: utterance_id.clone(),
            reason,
        };
        if candidates.is_empty() {
            return Err(invalid("no hypotheses".into()));
        }
        if let Some(i) = candidates.iter().position(|(w, _)| w.is_empty()) {
            return Err(invalid(format!("hypothesis {i} is empty")));
        }
        if let Some(i) = candidates.iter().position(|(_, s)| !s.is_finite()) {
            return Err(invalid(format!("hypothesis {i} has a non-finite score")));
        }
        let mut candidates = candidates;
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
        let hypotheses = candidates
            .into_iter()
            .enumerate()
            .map(|(i, (words, score))| Hypothesis {
                tokens: vocab.encode(&words),
                words,
                rank: i + 1,
                first_pass_score: score,
            })
            .collect();
        Ok(NBestList {
            utterance_id,
            hypotheses,
        })
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Checks ranks are exactly `1..=N` and scores non-increasing.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidNBest {
            utterance: self.utterance_id.clone(),
            reason,
        };
        if self.hypotheses.is_empty() {
            return Err(invalid("no hypotheses".into()));
        }
        for (i, h) in self.hypotheses.iter().enumerate() {
            if h.rank != i + 1 {
                return Err(invalid(format!("rank {} at position {}", h.rank, i + 1)));
            }
            if h.tokens.is_empty() || h.tokens.len() != h.words.len() {
                return Err(invalid(format!("hypothesis {} has no tokens", h.rank)));
            }
        }
        if self
            .hypotheses
            .windows(2)
            .any(|w| w[0].first_pass_score < w[1].first_pass_score)
        {
            return Err(invalid("scores are not in descending order".into()));
        }
        Ok(())
    }
}

/// One recognized utterance of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub client_id: String,
    /// Temporal order within the client.
    pub seq: u64,
    pub reference: Vec<String>,
    pub nbest: NBestList,
}

/// All utterances of one client in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStream {
    pub client_id: String,
    pub utterances: Vec<Utterance>,
}

pub type Fleet = Vec<ClientStream>;

/// Groups utterances by client (clients sorted by id) and orders each
/// client's stream by `seq`.
pub fn group_fleet(utterances: Vec<Utterance>) -> Fleet {
    let mut by_client: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    for u in utterances {
        by_client.entry(u.client_id.clone()).or_default().push(u);
    }
    by_client
        .into_iter()
        .map(|(client_id, mut utterances)| {
            utterances.sort_by_key(|u| u.seq);
            ClientStream {
                client_id,
                utterances,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NBestEntryRecord {
    pub text: String,
    pub score: f64,
}

/// One JSON Lines record of the N-best fleet format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub client_id: String,
    pub seq: u64,
    pub reference: String,
    pub nbest: Vec<NBestEntryRecord>,
}

impl UtteranceRecord {
    pub fn resolve(self, vocab: &Vocabulary) -> Result<Utterance> {
        let reference = tokenize(&self.reference);
        if reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        let candidates = self
            .nbest
            .into_iter()
            .map(|e| (tokenize(&e.text), e.score))
            .collect();
        Ok(Utterance {
            nbest: NBestList::from_scored(self.utterance_id.clone(), candidates, vocab)?,
            utterance_id: self.utterance_id,
            client_id: self.client_id,
            seq: self.seq,
            reference,
        })
    }

    pub fn from_utterance(u: &Utterance) -> Self {
        UtteranceRecord {
            utterance_id: u.utterance_id.clone(),
            client_id: u.client_id.clone(),
            seq: u.seq,
            reference: u.reference.join(" "),
            nbest: u
                .nbest
                .hypotheses
                .iter()
                .map(|h| NBestEntryRecord {
                    text: h.words.join(" "),
                    score: h.first_pass_score,
                })
                .collect(),
        }
    }
}

pub fn read_fleet_jsonl(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Fleet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut utterances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let utt = record
            .resolve(vocab)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        utterances.push(utt);
    }
    Ok(group_fleet(utterances))
}

pub fn write_fleet_jsonl<W: Write>(fleet: &[ClientStream], out: &mut W) -> std::io::Result<()> {
    for stream in fleet {
        for u in &stream.utterances {
            let line = serde_json::to_string(&UtteranceRecord::from_utterance(u))?;
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
