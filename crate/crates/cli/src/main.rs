use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fmp_cli::{
    cmd_benchmark, cmd_gen_fleet, cmd_report, cmd_reproduce, cmd_run_sim, cmd_sweep, cmd_train_lm, load_fleet_spec,
    sweep::parse_seeds, BenchmarkArgs, Overrides, RunSimArgs, SweepArgs, UsageError,
};
use fmp_core::synth::FleetSpec;

#[derive(Parser)]
#[command(name = "fmp", version, about = "Federated marginal personalization for N-best rescoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct SimFlags {
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of rounds T.
    #[arg(long)]
    rounds: Option<usize>,
    /// Enables DP aggregation with this epsilon.
    #[arg(long)]
    dp_epsilon: Option<f64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl SimFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            rounds: self.rounds,
            dp_epsilon: self.dp_epsilon,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the background n-gram LM and unigram from a text corpus.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long, default_value_t = 0.01)]
        smoothing_k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic fleet, its background corpus and model.
    GenFleet {
        /// Fleet spec (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one federated simulation with a paired baseline.
    RunSim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fleet: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: SimFlags,
    },
    /// Run a parameter grid on one fleet.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        fleet: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: SimFlags,
    },
    /// Run the synthetic benchmark over several seeds.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Seeds such as `1-5` or `1,3,9`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: SimFlags,
    },
    /// Render a markdown report and WER plot from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// A sweep.csv or benchmark.csv to append as a table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun a simulation from its manifest and verify the outputs.
    Reproduce {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainLm {
            corpus,
            order,
            min_count,
            smoothing_k,
            out,
        } => {
            let s = cmd_train_lm(&corpus, order, min_count, smoothing_k, &out)?;
            println!("vocab size: {}", s.vocab_size);
            println!("sentences: {}, tokens: {}", s.sentences, s.tokens);
            match s.held_out_perplexity {
                Some(p) => println!("held-out perplexity: {p:.3}"),
                None => println!("held-out perplexity: n/a (corpus too small to hold out lines)"),
            }
            println!("wrote {}", out.display());
        }
        Command::GenFleet { config, seed, out } => {
            let spec = match &config {
                Some(p) => load_fleet_spec(p)?,
                None => FleetSpec::default(),
            };
            let seed = seed.unwrap_or(spec.seed);
            let g = cmd_gen_fleet(&spec, seed, &out)?;
            println!("vocab size: {}", g.vocab_size);
            for p in [&g.background, &g.fleet, &g.meta, &g.model] {
                println!("wrote {}", p.display());
            }
        }
        Command::RunSim {
            config,
            fleet,
            lm,
            out,
            flags,
        } => {
            let o = cmd_run_sim(&RunSimArgs {
                config: &config,
                fleet: &fleet,
                lm: &lm,
                out: &out,
                threads: flags.threads,
                overrides: flags.overrides(),
            })?;
            for m in &o.report.rounds {
                println!(
                    "round {}: wer_fmp {} wer_baseline {} ({} words)",
                    m.round,
                    pct(m.wer_fmp),
                    pct(m.wer_baseline),
                    m.fmp.words
                );
            }
            let s = &o.report.summary;
            println!(
                "overall: wer_fmp {} wer_baseline {} relative reduction {}",
                pct(s.wer_fmp),
                pct(s.wer_baseline),
                pct(s.relative_reduction)
            );
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            config,
            sweep,
            fleet,
            lm,
            out,
            flags,
        } => {
            let rows = cmd_sweep(&SweepArgs {
                config: &config,
                sweep: &sweep,
                fleet: &fleet,
                lm: &lm,
                out: &out,
                threads: flags.threads,
                overrides: flags.overrides(),
            })?;
            print_rows(&rows);
        }
        Command::Benchmark {
            config,
            sweep,
            seeds,
            out,
            flags,
        } => {
            let seeds = seeds
                .as_deref()
                .map(parse_seeds)
                .transpose()
                .map_err(|e| UsageError(format!("--seeds: {e}")))?;
            let rows = cmd_benchmark(&BenchmarkArgs {
                config: &config,
                sweep: sweep.as_deref(),
                seeds,
                out: &out,
                threads: flags.threads,
                overrides: flags.overrides(),
            })?;
            print_rows(&rows);
        }
        Command::Report { run, table, out } => {
            let path = cmd_report(&run, table.as_deref(), &out)?;
            println!("wrote {}", path.display());
        }
        Command::Reproduce { manifest, out } => {
            let o = cmd_reproduce(&manifest, &out)?;
            println!("reproduced {} output files identically into {}", o.manifest.outputs.len(), out.display());
        }
    }
    Ok(())
}

fn print_rows(rows: &[fmp_cli::SweepRow]) {
    println!("lambda  alpha  beta   sigma  T   eps    wer_fmp  wer_base  rel");
    for r in rows {
        let eps = r.dp_epsilon.map_or("-".to_string(), |e| e.to_string());
        println!(
            "{:<7} {:<6} {:<6} {:<6} {:<3} {:<6} {:<8} {:<9} {}",
            r.lambda,
            r.alpha,
            r.beta,
            r.sigma,
            r.rounds,
            eps,
            pct(r.wer_fmp),
            pct(r.wer_baseline),
            pct(r.relative_reduction)
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
