//! Versioned records exchanged between clients and the server.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::server::{apply_delta, compute_delta, ClientUpload};
use crate::unigram::UnigramDistribution;

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadPayload {
    Dense(Vec<f64>),
    /// Difference from the distribution the server last broadcast.
    Delta(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub version: u32,
    pub client_id: String,
    pub round: usize,
    pub c: f64,
    pub payload: UploadPayload,
    pub vocab_hash: String,
}

impl UploadRecord {
    pub fn dense(upload: &ClientUpload, round: usize, vocab_hash: &str) -> Self {
        UploadRecord {
            version: WIRE_VERSION,
            client_id: upload.client_id.clone(),
            round,
            c: upload.c,
            payload: UploadPayload::Dense(upload.q.probs().to_vec()),
            vocab_hash: vocab_hash.to_string(),
        }
    }

    pub fn delta(
        upload: &ClientUpload,
        reference: &UnigramDistribution,
        round: usize,
        vocab_hash: &str,
    ) -> Result<Self> {
        Ok(UploadRecord {
            version: WIRE_VERSION,
            client_id: upload.client_id.clone(),
            round,
            c: upload.c,
            payload: UploadPayload::Delta(compute_delta(&upload.q, reference)?),
            vocab_hash: vocab_hash.to_string(),
        })
    }

    /// Validates version and vocabulary hash, then reconstructs the upload.
    /// Delta payloads are applied to `reference`.
    pub fn decode(&self, expected_hash: &str, reference: &UnigramDistribution) -> Result<ClientUpload> {
        if self.version != WIRE_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported upload version {} (expected {WIRE_VERSION})",
                self.version
            )));
        }
        if self.vocab_hash != expected_hash {
            return Err(Error::VocabHashMismatch {
                expected: expected_hash.to_string(),
                actual: self.vocab_hash.clone(),
            });
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!("upload weight {} is invalid", self.c)));
        }
        let q = match &self.payload {
            UploadPayload::Dense(p) => {
                let q = UnigramDistribution::new(p.clone())?;
                q.check_len(reference.len())?;
                q
            }
            UploadPayload::Delta(d) => apply_delta(reference, d)?,
        };
        Ok(ClientUpload {
            client_id: self.client_id.clone(),
            q,
            c: self.c,
        })
    }
}

/// Dense distribution keyed by vocabulary hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnigramRecord {
    pub version: u32,
    pub vocab_hash: String,
    pub probs: Vec<f64>,
}

impl UnigramRecord {
    pub fn new(q: &UnigramDistribution, vocab_hash: &str) -> Self {
        UnigramRecord {
            version: WIRE_VERSION,
            vocab_hash: vocab_hash.to_string(),
            probs: q.probs().to_vec(),
        }
    }

    pub fn decode(&self, expected_hash: &str) -> Result<UnigramDistribution> {
        if self.vocab_hash != expected_hash {
            return Err(Error::VocabHashMismatch {
                expected: expected_hash.to_string(),
                actual: self.vocab_hash.clone(),
            });
        }
        UnigramDistribution::new(self.probs.clone())
    }
}

pub fn write_upload_log<W: Write>(records: &[UploadRecord], out: &mut W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_upload_log<R: BufRead>(input: R, path: &str) -> Result<Vec<UploadRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}
