//! Federated marginal personalization of n-gram language models for
//! second-pass N-best rescoring.

pub mod adapt;
pub mod client;
pub mod error;
pub mod nbest;
pub mod ngram;
pub mod rescore;
pub mod rng;
pub mod server;
pub mod sim;
pub mod synth;
pub mod unigram;
pub mod vocab;
pub mod wer;
pub mod wire;

pub use adapt::{build_adapted_lm, interpolate_marginals, AdaptationParams, AdaptedLM};
pub use client::{client_round, estimate_personal_unigram, kernel_weight, ClientCache, ClientState, RoundContext};
pub use error::{Error, Result};
pub use nbest::{ClientStream, Fleet, Hypothesis, NBestList, Utterance};
pub use ngram::{train_ngram, BackoffNGramLM, LanguageModel};
pub use rescore::{rescore_nbest, RescoreConfig, Rescored};
pub use server::{dp_federated_average, federated_average, ClientUpload, DPConfig, ServerState};
pub use sim::{run_simulation, RoundMetrics, SimulationConfig, SimulationReport, SimulationSummary};
pub use synth::{FleetSpec, SyntheticBenchmark, SyntheticNoiseModel, SyntheticWorld};
pub use unigram::{estimate_background_unigram, UnigramDistribution};
pub use vocab::{build_vocabulary, tokenize, Corpus, TokenId, Vocabulary};
pub use wer::{wer, ErrorCounts};
