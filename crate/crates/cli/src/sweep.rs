//! Hyper-parameter grids and multi-seed benchmark runs.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fmp_core::nbest::ClientStream;
use fmp_core::ngram::LanguageModel;
use fmp_core::sim::{run_simulation, SimulationConfig, SimulationReport};
use fmp_core::synth::{FleetSpec, SyntheticBenchmark};
use fmp_core::unigram::UnigramDistribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Parameter lists; an empty list keeps the base configuration's value.
///
/// `alpha` and `beta` form a Cartesian product unless `zip_alpha_beta` is set,
/// in which case they are paired element-wise. DP points come from
/// `dp_epsilon`; `include_non_dp` adds a DP-free point alongside them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rounds: Vec<usize>,
    pub dp_epsilon: Vec<f64>,
    pub zip_alpha_beta: bool,
    pub include_non_dp: bool,
}

fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading sweep {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing sweep {}", path.display()))
    }

    /// Expands the grid against `base` and validates every point.
    pub fn expand(&self, base: &SimulationConfig) -> Result<Vec<SimulationConfig>> {
        let pairs: Vec<(f64, f64)> = if self.zip_alpha_beta {
            if self.alpha.len() != self.beta.len() {
                bail!(
                    "zip_alpha_beta needs alpha and beta lists of equal length ({} vs {})",
                    self.alpha.len(),
                    self.beta.len()
                );
            }
            if self.alpha.is_empty() {
                vec![(base.alpha, base.beta)]
            } else {
                self.alpha.iter().copied().zip(self.beta.iter().copied()).collect()
            }
        } else {
            let alphas = or_base(&self.alpha, base.alpha);
            let betas = or_base(&self.beta, base.beta);
            alphas
                .iter()
                .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
                .collect()
        };
        let dp: Vec<Option<f64>> = if self.dp_epsilon.is_empty() {
            vec![base.dp_enabled.then_some(base.dp_epsilon)]
        } else {
            let mut v: Vec<Option<f64>> = Vec::new();
            if self.include_non_dp {
                v.push(None);
            }
            v.extend(self.dp_epsilon.iter().map(|&e| Some(e)));
            v
        };

        let mut points = Vec::new();
        for &lambda in &or_base(&self.lambda, base.lambda) {
            for &(alpha, beta) in &pairs {
                for &sigma in &or_base(&self.sigma, base.sigma) {
                    for &rounds in &or_base(&self.rounds, base.rounds) {
                        for &eps in &dp {
                            let cfg = SimulationConfig {
                                lambda,
                                alpha,
                                beta,
                                sigma,
                                rounds,
                                dp_enabled: eps.is_some(),
                                dp_epsilon: eps.unwrap_or(base.dp_epsilon),
                                ..base.clone()
                            };
                            cfg.validate().with_context(|| {
                                format!("invalid grid point lambda={lambda} alpha={alpha} beta={beta} sigma={sigma} rounds={rounds} dp_epsilon={eps:?}")
                            })?;
                            points.push(cfg);
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

/// One grid point's outcome, averaged over seeds when there are several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub rounds: usize,
    pub dp_epsilon: Option<f64>,
    pub seeds: usize,
    pub wer_fmp: f64,
    pub wer_baseline: f64,
    pub relative_reduction: f64,
    /// FMP-arm WER of the first round (no adaptation yet).
    pub wer_fmp_round0: f64,
    /// FMP-arm WER of the last round.
    pub wer_fmp_last_round: f64,
    pub words: usize,
}

impl SweepRow {
    pub fn from_reports(cfg: &SimulationConfig, reports: &[SimulationReport]) -> Self {
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&SimulationReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let wer_fmp = mean(&|r| r.summary.wer_fmp);
        let wer_baseline = mean(&|r| r.summary.wer_baseline);
        SweepRow {
            lambda: cfg.lambda,
            alpha: cfg.alpha,
            beta: cfg.beta,
            sigma: cfg.sigma,
            rounds: cfg.rounds,
            dp_epsilon: cfg.dp_enabled.then_some(cfg.dp_epsilon),
            seeds: reports.len(),
            wer_fmp,
            wer_baseline,
            relative_reduction: if wer_baseline > 0.0 {
                (wer_baseline - wer_fmp) / wer_baseline
            } else {
                0.0
            },
            wer_fmp_round0: mean(&|r| r.rounds[0].wer_fmp),
            wer_fmp_last_round: mean(&|r| r.rounds.last().expect("at least two rounds").wer_fmp),
            words: reports.iter().map(|r| r.summary.words).sum(),
        }
    }
}

/// Runs every point on one shared fleet and seed.
pub fn run_sweep(
    points: &[SimulationConfig],
    fleet: &[ClientStream],
    base: Arc<dyn LanguageModel>,
    background: &UnigramDistribution,
) -> Result<Vec<SweepRow>> {
    points
        .iter()
        .map(|cfg| {
            let report = run_simulation(cfg, fleet, base.clone(), background)?;
            Ok(SweepRow::from_reports(cfg, &[report]))
        })
        .collect()
}

/// A synthetic fleet recipe, a simulation configuration and evaluation seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub fleet: FleetSpec,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

impl BenchmarkConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading benchmark {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing benchmark {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text)?;
        cfg.fleet.validate()?;
        cfg.simulation.validate()?;
        Ok(cfg)
    }
}

/// Runs each point on every seed. Seed `s` generates the world, the N-best
/// lists and the simulation randomness, so all points share inputs per seed.
pub fn run_benchmark(spec: &FleetSpec, seeds: &[u64], points: &[SimulationConfig]) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        bail!("benchmark needs at least one seed");
    }
    let per_seed: Vec<Vec<SimulationReport>> = seeds
        .par_iter()
        .map(|&seed| {
            let bench = SyntheticBenchmark::build(spec, seed)?;
            points
                .iter()
                .map(|cfg| {
                    let cfg = SimulationConfig { seed, ..cfg.clone() };
                    Ok(run_simulation(&cfg, &bench.fleet, bench.lm.clone(), &bench.background)?)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let reports: Vec<SimulationReport> = per_seed.iter().map(|r| r[i].clone()).collect();
            SweepRow::from_reports(cfg, &reports)
        })
        .collect())
}

/// Parses `1,2,7` or inclusive ranges such as `1-5`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if b < a {
                    bail!("empty seed range {part}");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed {part:?}"))?),
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}
