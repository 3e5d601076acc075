//! Pipeline commands behind the `fmp` binary.

pub mod artifact;
pub mod manifest;
pub mod report;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fmp_core::nbest::{read_fleet_jsonl, write_fleet_jsonl, Fleet};
use fmp_core::ngram::LanguageModel;
use fmp_core::sim::{run_simulation, SimulationConfig, SimulationReport, SimulationSummary};
use fmp_core::synth::{FleetSpec, SyntheticWorld};
use fmp_core::vocab::Corpus;
use fmp_core::wire::write_upload_log;
use serde::{Deserialize, Serialize};

pub use artifact::ModelArtifact;
pub use manifest::{FileDigest, RunManifest, TOOL_VERSION};
pub use sweep::{BenchmarkConfig, SweepRow, SweepSpec};

use report::MetricsRow;

/// A problem with how the tool was invoked rather than with its inputs.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Every `held_out_every`-th corpus line is held out for perplexity.
pub const HELD_OUT_EVERY: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub vocab_size: usize,
    pub sentences: usize,
    pub tokens: usize,
    /// `None` when the corpus is too small to hold anything out.
    pub held_out_perplexity: Option<f64>,
}

/// Trains on the full corpus and writes the model artifact. Perplexity comes
/// from a separate model fitted on the other 95% of lines and evaluated on
/// every 20th line.
pub fn cmd_train_lm(
    corpus_path: &Path,
    order: usize,
    min_count: usize,
    smoothing_k: f64,
    out_path: &Path,
) -> Result<TrainSummary> {
    let corpus = Corpus::read(corpus_path)?;
    let model = ModelArtifact::train(&corpus, order, min_count, smoothing_k)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    model.save(out_path)?;

    let (train, held_out) = corpus.split_every(HELD_OUT_EVERY);
    let held_out_perplexity = if held_out.is_empty() || train.is_empty() {
        None
    } else {
        Some(ModelArtifact::train(&train, order, min_count, smoothing_k)?.lm.perplexity(&held_out))
    };
    Ok(TrainSummary {
        vocab_size: model.lm.vocab().len(),
        sentences: corpus.len(),
        tokens: corpus.token_count(),
        held_out_perplexity,
    })
}

/// Sidecar written next to a generated fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetMeta {
    pub vocab_hash: String,
    pub seed: u64,
    pub clients: usize,
    pub utterances: usize,
    pub spec: FleetSpec,
}

pub fn fleet_meta_path(fleet_path: &Path) -> PathBuf {
    fleet_path.with_extension("meta.json")
}

pub fn load_fleet_spec(path: &Path) -> Result<FleetSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading fleet spec {}", path.display()))?;
    let spec: FleetSpec = toml::from_str(&text).with_context(|| format!("parsing fleet spec {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFleet {
    pub background: PathBuf,
    pub fleet: PathBuf,
    pub meta: PathBuf,
    pub model: PathBuf,
    pub vocab_size: usize,
}

/// Writes `background.txt`, `fleet.jsonl`, `fleet.meta.json` and `lm.fmplm`
/// (the background model trained with the fleet's order) into `out_dir`.
pub fn cmd_gen_fleet(spec: &FleetSpec, seed: u64, out_dir: &Path) -> Result<GeneratedFleet> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let world = SyntheticWorld::generate(spec, seed)?;
    let model = ModelArtifact::train(&world.background, spec.lm_order, spec.min_count, spec.background_smoothing_k)?;
    let vocab = model.lm.vocab();
    let fleet = world.fleet(vocab)?;

    let paths = GeneratedFleet {
        background: out_dir.join("background.txt"),
        fleet: out_dir.join("fleet.jsonl"),
        meta: out_dir.join("fleet.meta.json"),
        model: out_dir.join("lm.fmplm"),
        vocab_size: vocab.len(),
    };
    let mut out = create(&paths.background)?;
    for utt in world.background.utterances() {
        writeln!(out, "{}", utt.join(" "))?;
    }
    out.flush()?;
    let mut out = create(&paths.fleet)?;
    write_fleet_jsonl(&fleet, &mut out)?;
    out.flush()?;
    let meta = FleetMeta {
        vocab_hash: vocab.hash(),
        seed,
        clients: fleet.len(),
        utterances: fleet.iter().map(|c| c.utterances.len()).sum(),
        spec: spec.clone(),
    };
    fs::write(&paths.meta, serde_json::to_string_pretty(&meta)? + "\n")?;
    model.save(&paths.model)?;
    Ok(paths)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn load_sim_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Loads a fleet against the model's vocabulary, refusing a fleet whose
/// sidecar records a different vocabulary.
pub fn load_fleet(fleet_path: &Path, model: &ModelArtifact) -> Result<Fleet> {
    let meta_path = fleet_meta_path(fleet_path);
    let vocab = model.lm.vocab();
    if meta_path.exists() {
        let meta: FleetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
            .with_context(|| format!("parsing {}", meta_path.display()))?;
        if meta.vocab_hash != vocab.hash() {
            return Err(fmp_core::Error::VocabHashMismatch {
                expected: vocab.hash(),
                actual: meta.vocab_hash,
            })
            .with_context(|| format!("fleet {} was generated for a different model", fleet_path.display()));
        }
    }
    Ok(read_fleet_jsonl(fleet_path, vocab)?)
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub dp_epsilon: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SimulationConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.rounds {
            cfg.rounds = t;
        }
        if let Some(e) = self.dp_epsilon {
            cfg.dp_enabled = true;
            cfg.dp_epsilon = e;
        }
    }
}

/// Runs `f` on a dedicated pool when a thread count is given.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(UsageError("--threads must be at least 1".into()).into()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SummaryFile<'a> {
    seed: u64,
    config: &'a SimulationConfig,
    summary: &'a SimulationSummary,
    adapted_rounds: &'a SimulationSummary,
    rounds: &'a [fmp_core::sim::RoundMetrics],
}

pub fn metrics_rows(report: &SimulationReport) -> Vec<MetricsRow> {
    report
        .rounds
        .iter()
        .map(|m| MetricsRow {
            round: m.round,
            wer_fmp: m.wer_fmp,
            wer_baseline: m.wer_baseline,
            sub: m.fmp.substitutions,
            ins: m.fmp.insertions,
            del: m.fmp.deletions,
            words: m.fmp.words,
        })
        .collect()
}

/// Writes metrics and optional logs; returns file name to digest.
fn write_run_outputs(
    report: &SimulationReport,
    cfg: &SimulationConfig,
    out_dir: &Path,
) -> Result<BTreeMap<String, String>> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut names = vec!["metrics.csv", "summary.json"];

    let mut writer = csv::Writer::from_path(out_dir.join("metrics.csv"))?;
    for row in metrics_rows(report) {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let summary = SummaryFile {
        seed: cfg.seed,
        config: cfg,
        summary: &report.summary,
        adapted_rounds: &report.adapted_summary,
        rounds: &report.rounds,
    };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;

    if cfg.record_uploads {
        let mut out = create(&out_dir.join("uploads.jsonl"))?;
        write_upload_log(&report.uploads, &mut out)?;
        out.flush()?;
        names.push("uploads.jsonl");
    }
    if cfg.record_traces {
        let mut out = create(&out_dir.join("traces.jsonl"))?;
        for t in &report.traces {
            writeln!(out, "{}", serde_json::to_string(t)?)?;
        }
        out.flush()?;
        names.push("traces.jsonl");
    }
    names
        .into_iter()
        .map(|n| Ok((n.to_string(), manifest::sha256_file(&out_dir.join(n))?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: SimulationReport,
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

pub struct RunSimArgs<'a> {
    pub config: &'a Path,
    pub fleet: &'a Path,
    pub lm: &'a Path,
    pub out: &'a Path,
    pub threads: Option<usize>,
    pub overrides: Overrides,
}

pub fn cmd_run_sim(args: &RunSimArgs) -> Result<RunOutcome> {
    let mut cfg = load_sim_config(args.config)?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let mut inputs = BTreeMap::new();
    inputs.insert("config".to_string(), FileDigest::of(args.config)?);
    inputs.insert("fleet".to_string(), FileDigest::of(args.fleet)?);
    inputs.insert("lm".to_string(), FileDigest::of(args.lm)?);
    execute_run(cfg, inputs, args.threads, args.out)
}

fn execute_run(
    cfg: SimulationConfig,
    inputs: BTreeMap<String, FileDigest>,
    threads: Option<usize>,
    out_dir: &Path,
) -> Result<RunOutcome> {
    let model = ModelArtifact::load(&inputs["lm"].path)?;
    let fleet = load_fleet(&inputs["fleet"].path, &model)?;
    let base: Arc<dyn LanguageModel> = Arc::new(model.lm);
    let report = with_threads(threads, || run_simulation(&cfg, &fleet, base, &model.background))??;
    let outputs = write_run_outputs(&report, &cfg, out_dir)?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        threads,
        config: cfg,
        inputs,
        outputs,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(RunOutcome {
        report,
        manifest,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Reruns a recorded simulation into `out_dir` and checks that every output
/// digest matches the manifest.
pub fn cmd_reproduce(manifest_path: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let recorded = RunManifest::load(manifest_path)?;
    for key in ["fleet", "lm"] {
        let Some(d) = recorded.inputs.get(key) else {
            bail!("manifest has no `{key}` input");
        };
        let now = manifest::sha256_file(&d.path)?;
        if now != d.sha256 {
            bail!("input {} changed since the run (sha256 {now}, recorded {})", d.path.display(), d.sha256);
        }
    }
    let outcome = execute_run(recorded.config.clone(), recorded.inputs.clone(), recorded.threads, out_dir)?;
    if outcome.manifest.outputs != recorded.outputs {
        let differing: Vec<&String> = recorded
            .outputs
            .iter()
            .filter(|(k, v)| outcome.manifest.outputs.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        bail!("reproduction differs from the recorded run in {differing:?}");
    }
    Ok(outcome)
}

pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub struct SweepArgs<'a> {
    pub config: &'a Path,
    pub sweep: &'a Path,
    pub fleet: &'a Path,
    pub lm: &'a Path,
    pub out: &'a Path,
    pub threads: Option<usize>,
    pub overrides: Overrides,
}

/// Expands and validates the whole grid, then runs each point on the shared
/// fleet. Writes `sweep.csv`.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let mut base = load_sim_config(args.config)?;
    args.overrides.apply(&mut base);
    let points = SweepSpec::load(args.sweep)?.expand(&base)?;
    let model = ModelArtifact::load(args.lm)?;
    let fleet = load_fleet(args.fleet, &model)?;
    let lm: Arc<dyn LanguageModel> = Arc::new(model.lm);
    let rows = with_threads(args.threads, || sweep::run_sweep(&points, &fleet, lm, &model.background))??;
    fs::create_dir_all(args.out)?;
    write_rows(&rows, &args.out.join("sweep.csv"))?;
    Ok(rows)
}

pub struct BenchmarkArgs<'a> {
    pub config: &'a Path,
    pub sweep: Option<&'a Path>,
    pub seeds: Option<Vec<u64>>,
    pub out: &'a Path,
    pub threads: Option<usize>,
    pub overrides: Overrides,
}

/// Synthetic benchmark over several seeds, optionally over a grid.
/// Writes `benchmark.csv` with seed-averaged rows.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<Vec<SweepRow>> {
    let bench = BenchmarkConfig::load(args.config)?;
    let mut base = bench.simulation.clone();
    args.overrides.apply(&mut base);
    base.validate()?;
    let points = match args.sweep {
        Some(p) => SweepSpec::load(p)?.expand(&base)?,
        None => vec![base],
    };
    let seeds = match &args.seeds {
        Some(s) => s.clone(),
        None if !bench.seeds.is_empty() => bench.seeds.clone(),
        None => vec![bench.fleet.seed],
    };
    let rows = with_threads(args.threads, || sweep::run_benchmark(&bench.fleet, &seeds, &points))??;
    fs::create_dir_all(args.out)?;
    write_rows(&rows, &args.out.join("benchmark.csv"))?;
    Ok(rows)
}

/// Renders `report.md` and `wer_curve.svg` from a run directory, with an
/// optional sweep or benchmark table appended.
pub fn cmd_report(run_dir: &Path, table: Option<&Path>, out_dir: &Path) -> Result<PathBuf> {
    let rows = report::read_metrics(&run_dir.join("metrics.csv"))?;
    fs::create_dir_all(out_dir)?;
    let svg_path = out_dir.join("wer_curve.svg");
    fs::write(&svg_path, report::wer_curve_svg(&rows))?;
    let mut md = String::from("# WER by round\n\n");
    md.push_str(&report::metrics_markdown(&rows));
    md.push_str("\n![WER by round](wer_curve.svg)\n");
    let summary_path = run_dir.join("summary.json");
    if summary_path.exists() {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary_path)?)?;
        if let Some(s) = v.get("summary") {
            let get = |k: &str| s.get(k).and_then(serde_json::Value::as_f64).unwrap_or(f64::NAN);
            md.push_str(&format!(
                "\nOverall: WER {:.2}% (FMP) vs {:.2}% (baseline), relative reduction {:.2}%.\n",
                100.0 * get("wer_fmp"),
                100.0 * get("wer_baseline"),
                100.0 * get("relative_reduction")
            ));
        }
    }
    if let Some(t) = table {
        md.push_str("\n# Grid\n\n");
        md.push_str(&report::csv_to_markdown(t)?);
    }
    let md_path = out_dir.join("report.md");
    fs::write(&md_path, md)?;
    Ok(md_path)
}
