//! Round-based federated simulation with a paired baseline arm.
//!
//! Every client's stream is split into `T + 1` consecutive groups. Round `t`
//! rescores group `t` twice: once with the client's adapted LM and once with
//! the unadapted base LM, so both arms see identical N-best lists.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptationParams, AdaptedLM};
use crate::client::{client_round, ClientState, RoundContext, DEFAULT_SMOOTHING_K};
use crate::error::{Error, Result};
use crate::nbest::{ClientStream, NBestList};
use crate::ngram::LanguageModel;
use crate::rescore::{rescore_nbest, RescoreConfig, RescoreTrace};
use crate::rng::{stream_rng, STREAM_SAMPLING};
use crate::server::{sample_clients, DPConfig, ServerState};
use crate::unigram::UnigramDistribution;
use crate::wer::{wer, ErrorCounts};
use crate::wire::UploadRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadEncoding {
    #[default]
    Dense,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Number of adapted rounds `T`; the stream is cut into `T + 1` groups.
    pub rounds: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Rank-kernel bandwidth.
    pub sigma: f64,
    pub lm_weight: f64,
    pub smoothing_k: f64,
    pub sample_fraction: f64,
    pub dp_enabled: bool,
    pub dp_epsilon: f64,
    pub upload_encoding: UploadEncoding,
    /// Keep every upload record in the report.
    pub record_uploads: bool,
    /// Keep a per-utterance trace of the adapted arm.
    pub record_traces: bool,
    /// Single source of randomness for client sampling and DP noise.
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let params = AdaptationParams::default();
        SimulationConfig {
            rounds: 5,
            lambda: params.lambda,
            alpha: params.alpha,
            beta: params.beta,
            sigma: 5.0,
            lm_weight: RescoreConfig::default().lm_weight,
            smoothing_k: DEFAULT_SMOOTHING_K,
            sample_fraction: 1.0,
            dp_enabled: false,
            dp_epsilon: 1.0,
            upload_encoding: UploadEncoding::Dense,
            record_uploads: false,
            record_traces: false,
            seed: 1,
        }
    }
}

impl SimulationConfig {
    pub fn params(&self) -> Result<AdaptationParams> {
        AdaptationParams::new(self.lambda, self.alpha, self.beta)
    }

    pub fn rescore(&self) -> Result<RescoreConfig> {
        RescoreConfig::new(self.lm_weight)
    }

    pub fn dp(&self) -> DPConfig {
        DPConfig {
            enabled: self.dp_enabled,
            epsilon: self.dp_epsilon,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.rescore()?;
        self.dp().validate()?;
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be at least 1".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.smoothing_k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "smoothing_k must be positive, got {}",
                self.smoothing_k
            )));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample_fraction must lie in (0, 1], got {}",
                self.sample_fraction
            )));
        }
        Ok(())
    }
}

/// Splits a stream of `n` utterances into `rounds + 1` consecutive groups
/// whose sizes differ by at most one, larger groups first.
pub fn partition_rounds(n: usize, rounds: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let groups = rounds + 1;
    if n < groups {
        return Err(Error::TooFewUtterances {
            client: String::new(),
            available: n,
            required: groups,
        });
    }
    let (base, extra) = (n / groups, n % groups);
    let mut start = 0;
    Ok((0..groups)
        .map(|g| {
            let len = base + usize::from(g < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub wer_fmp: f64,
    pub wer_baseline: f64,
    pub utterances: usize,
    pub fmp: ErrorCounts,
    pub baseline: ErrorCounts,
    /// Clients whose uploads reached the server this round.
    pub sampled_clients: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub wer_fmp: f64,
    pub wer_baseline: f64,
    /// `(baseline - fmp) / baseline`, zero when the baseline is perfect.
    pub relative_reduction: f64,
    pub utterances: usize,
    pub words: usize,
    pub fmp: ErrorCounts,
    pub baseline: ErrorCounts,
}

impl SimulationSummary {
    fn from_rounds(rounds: &[RoundMetrics]) -> Self {
        let fmp: ErrorCounts = rounds.iter().map(|r| r.fmp).sum();
        let baseline: ErrorCounts = rounds.iter().map(|r| r.baseline).sum();
        let relative_reduction = if baseline.wer() > 0.0 {
            (baseline.wer() - fmp.wer()) / baseline.wer()
        } else {
            0.0
        };
        SimulationSummary {
            wer_fmp: fmp.wer(),
            wer_baseline: baseline.wer(),
            relative_reduction,
            utterances: rounds.iter().map(|r| r.utterances).sum(),
            words: fmp.words,
            fmp,
            baseline,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub rounds: Vec<RoundMetrics>,
    /// Pooled over every round, round 0 included.
    pub summary: SimulationSummary,
    /// Pooled over rounds `1..=T`, where adaptation is active.
    pub adapted_summary: SimulationSummary,
    pub uploads: Vec<UploadRecord>,
    pub traces: Vec<RescoreTrace>,
    /// Global unigram after each aggregation.
    pub global_history: Vec<UnigramDistribution>,
}

struct ClientRoundResult {
    upload: crate::server::ClientUpload,
    fmp: ErrorCounts,
    baseline: ErrorCounts,
    utterances: usize,
    traces: Vec<RescoreTrace>,
}

/// Runs `T + 1` rounds over `fleet`.
///
/// Deterministic in `(config, fleet, base, background)`: client work runs in
/// parallel but results are gathered in fleet order, and all randomness comes
/// from seeded streams owned by the driver.
pub fn run_simulation(
    config: &SimulationConfig,
    fleet: &[ClientStream],
    base: Arc<dyn LanguageModel>,
    background: &UnigramDistribution,
) -> Result<SimulationReport> {
    config.validate()?;
    if fleet.is_empty() {
        return Err(Error::NoClients);
    }
    let vocab = base.vocab();
    background.check_len(vocab.len())?;
    let vocab_hash = vocab.hash();
    let groups = config.rounds + 1;
    let ranges = fleet
        .iter()
        .map(|s| {
            partition_rounds(s.utterances.len(), config.rounds).map_err(|e| match e {
                Error::TooFewUtterances { available, required, .. } => Error::TooFewUtterances {
                    client: s.client_id.clone(),
                    available,
                    required,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lists: Vec<Vec<NBestList>> = fleet
        .iter()
        .map(|s| s.utterances.iter().map(|u| u.nbest.clone()).collect())
        .collect();

    let ctx = RoundContext {
        base: base.clone(),
        background: background.clone(),
        params: config.params()?,
        sigma: config.sigma,
        smoothing_k: config.smoothing_k,
        rescore: config.rescore()?,
    };
    let baseline_lm = AdaptedLM::identity(base.clone());
    let mut states: Vec<ClientState> = fleet
        .iter()
        .map(|s| ClientState::new(s.client_id.clone(), base.clone()))
        .collect();
    let mut server = ServerState::new(config.dp())?;
    let mut sampling_rng = stream_rng(config.seed, STREAM_SAMPLING);
    let client_indices: Vec<usize> = (0..fleet.len()).collect();

    let mut report = SimulationReport {
        rounds: Vec::with_capacity(groups),
        summary: SimulationSummary::from_rounds(&[]),
        adapted_summary: SimulationSummary::from_rounds(&[]),
        uploads: Vec::new(),
        traces: Vec::new(),
        global_history: Vec::new(),
    };

    for round in 0..groups {
        let q_global = server.q_global.clone();
        let results: Vec<ClientRoundResult> = states
            .par_iter_mut()
            .enumerate()
            .map(|(ci, state)| {
                let range = ranges[ci][round].clone();
                let batch = &lists[ci][range.clone()];
                let out = client_round(state, q_global.as_ref(), batch, &ctx)?;
                let mut fmp = ErrorCounts::default();
                let mut baseline = ErrorCounts::default();
                let mut traces = Vec::new();
                for ((utt, nb), adapted) in fleet[ci].utterances[range].iter().zip(batch).zip(&out.rescored) {
                    fmp += wer(&utt.reference, &adapted.selected(nb).words)?.1;
                    let plain = rescore_nbest(nb, &baseline_lm, &ctx.rescore);
                    baseline += wer(&utt.reference, &plain.selected(nb).words)?.1;
                    if config.record_traces {
                        traces.push(RescoreTrace::new(nb, adapted));
                    }
                }
                Ok(ClientRoundResult {
                    upload: crate::server::ClientUpload {
                        client_id: state.client_id.clone(),
                        q: out.q,
                        c: out.c,
                    },
                    fmp,
                    baseline,
                    utterances: batch.len(),
                    traces,
                })
            })
            .collect::<Result<_>>()?;

        let sampled = sample_clients(&client_indices, config.sample_fraction, &mut sampling_rng)?;
        let reference = q_global.as_ref().unwrap_or(background);
        let mut uploads = Vec::with_capacity(sampled.len());
        for &ci in &sampled {
            let upload = &results[ci].upload;
            let record = match config.upload_encoding {
                UploadEncoding::Dense => UploadRecord::dense(upload, round, &vocab_hash),
                UploadEncoding::Delta => UploadRecord::delta(upload, reference, round, &vocab_hash)?,
            };
            uploads.push(record.decode(&vocab_hash, reference)?);
            if config.record_uploads {
                report.uploads.push(record);
            }
        }
        // A round where every sampled client is still empty keeps the old global.
        if uploads.iter().any(|u| u.c > 0.0) {
            let q = server.aggregate(&uploads)?.clone();
            report.global_history.push(q);
        }

        let fmp: ErrorCounts = results.iter().map(|r| r.fmp).sum();
        let baseline: ErrorCounts = results.iter().map(|r| r.baseline).sum();
        report.rounds.push(RoundMetrics {
            round,
            wer_fmp: fmp.wer(),
            wer_baseline: baseline.wer(),
            utterances: results.iter().map(|r| r.utterances).sum(),
            fmp,
            baseline,
            sampled_clients: sampled.len(),
        });
        report.traces.extend(results.into_iter().flat_map(|r| r.traces));
    }

    report.summary = SimulationSummary::from_rounds(&report.rounds);
    report.adapted_summary = SimulationSummary::from_rounds(&report.rounds[1..]);
    Ok(report)
}
