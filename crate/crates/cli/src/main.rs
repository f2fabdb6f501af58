//! `tesel`: synthetic data, training, retrieval, evaluation, benchmarks,
//! ablations and reports from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tesel_core::inference::{
    bench, comparison_table, evaluate, write_bench_csv, write_predictions, InferenceConfig,
};
use tesel_core::training::Mode;
use tesel_core::workbench::pipeline::{
    INDEX_FILE, METRICS_FILE, PREDICTIONS_FILE, RESOLVED_CONFIG, VOCAB_FILE,
};
use tesel_core::workbench::report::{ABLATION_TABLE_FILE, BENCH_TABLE_FILE, SWEEP_FILE};
use tesel_core::workbench::{
    build_vocab, load_run, prepare, report, run_ablation, run_k_sweep, run_paradigm_with, synth,
    write_run_artifacts, write_run_header, Dataset, MetricsRecord, Profile, RunConfig, SynthSpec,
};
use tesel_core::Error;

#[derive(Parser)]
#[command(name = "tesel", version, about = "Option selection by parallel entailment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key.path=value` overrides.
#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

/// A finished `train` run, reconfigured by overrides.
#[derive(Args)]
struct RunArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let path = self.run.join(RESOLVED_CONFIG);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        RunConfig::load(Some(&path), &self.overrides)
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Split {
    Train,
    Dev,
    Test,
}

fn split(ds: &Dataset, s: Split) -> &[tesel_core::SelectionInstance] {
    match s {
        Split::Train => &ds.train,
        Split::Dev => &ds.dev,
        Split::Test => &ds.test,
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_options: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_dev: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the vocabulary of `data_dir` into `out_dir`.
    BuildVocab(ConfigArgs),
    /// Train one paradigm, evaluate on test and write the run directory.
    Train(ConfigArgs),
    /// Query a run's retriever, or report recall@k over a split.
    Retrieve {
        #[command(flatten)]
        run: RunArgs,
        /// Free text to retrieve for; without it recall@k is computed.
        #[arg(long)]
        text: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value = "dev")]
        split: Split,
    },
    /// Re-evaluate a trained run on a split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Output directory; defaults to `<run>/eval-<split>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time pairwise against parallel scoring with a trained model.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Number of test cases to time.
        #[arg(long, default_value_t = 50)]
        cases: usize,
        /// Chunk sizes for the parallel rows; defaults to the run's chunk k.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Train and evaluate the four-row paradigm comparison.
    Ablate(ConfigArgs),
    /// Dev recall@k and metric across candidate-list sizes.
    SweepK {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
    },
    /// Render report.md and loss-curve CSVs for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<(), Error>) -> Result<(), Error> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn summarize(record: &MetricsRecord) -> String {
    let m = &record.metrics;
    let mut s = format!("{} on {} cases: ", record.mode.name(), m.instances);
    match (m.accuracy, m.f1) {
        (Some(a), _) => s.push_str(&format!("accuracy {a:.4}")),
        (_, Some(f)) => s.push_str(&format!(
            "P {:.4} R {:.4} F1 {f:.4}",
            m.precision.unwrap_or(0.0),
            m.recall.unwrap_or(0.0)
        )),
        _ => {}
    }
    if let Some(t) = record.tau {
        s.push_str(&format!(" (tau {t:.2})"));
    }
    s
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth {
            profile,
            out,
            n_options,
            n_train,
            n_dev,
            n_test,
            seed,
        } => {
            let profile: Profile = profile.parse()?;
            let d = SynthSpec::new(profile, seed);
            let spec = SynthSpec {
                n_options: n_options.unwrap_or(d.n_options),
                n_train: n_train.unwrap_or(d.n_train),
                n_dev: n_dev.unwrap_or(d.n_dev),
                n_test: n_test.unwrap_or(d.n_test),
                ..d
            };
            let ds = synth(&spec)?;
            ds.save(&out)?;
            println!(
                "wrote {} ({} options, {}/{}/{}) to {}",
                profile.name(),
                ds.space.len(),
                ds.train.len(),
                ds.dev.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::BuildVocab(args) => {
            let config = args.load()?;
            let ds = Dataset::load(&config.data_dir)?;
            let vocab = build_vocab(&ds, config.min_count)?;
            fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join(VOCAB_FILE);
            vocab.save(&path)?;
            println!("{} tokens -> {}", vocab.len(), path.display());
        }
        Command::Train(args) => {
            let config = args.load()?;
            let start = Instant::now();
            eprintln!("preparing {}", config.data_dir.display());
            let prepared = prepare(&config)?;
            if let Some(r) = &prepared.retrieval {
                eprintln!(
                    "retriever trained; dev recall@{} = {:.4}",
                    r.top_k,
                    r.retriever.recall_at_k(&prepared.dataset.dev, r.top_k)?
                );
            }
            let use_candidates = prepared.retrieval.is_some();
            let outcome = run_paradigm_with(&config, &prepared, &config.train, use_candidates, |epoch, metric| {
                eprintln!(
                    "epoch {:>3}  dev {:.4}  [{:.1}s]",
                    epoch + 1,
                    metric,
                    start.elapsed().as_secs_f64()
                );
            })?;
            write_run_artifacts(&config.out_dir, &config, &prepared, &outcome)?;
            let top_k = use_candidates.then(|| prepared.retrieval.as_ref().map(|r| r.top_k)).flatten();
            println!("{}", summarize(&MetricsRecord::from_outcome(&outcome, top_k)));
            println!("run written to {}", config.out_dir.display());
        }
        Command::Retrieve { run, text, k, split: s } => {
            let config = run.load()?;
            let (_, _, retriever) = load_run(&run.run)?;
            let retriever = retriever.ok_or_else(|| Error::MissingArtifact(run.run.join(INDEX_FILE)))?;
            let ds = Dataset::load(&config.data_dir)?;
            match text {
                Some(t) => {
                    for (rank, o) in retriever.top_k(&t, k)?.iter().enumerate() {
                        println!(
                            "{:>3}  {:.4}  {}",
                            rank + 1,
                            o.score,
                            ds.space.options()[o.option_index]
                        );
                    }
                }
                None => {
                    let n = ds.space.len();
                    let mut ks: Vec<usize> = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]
                        .into_iter()
                        .filter(|&x| x < n)
                        .collect();
                    ks.push(k.min(n));
                    ks.push(n);
                    ks.sort_unstable();
                    ks.dedup();
                    let recalls = retriever.recall_curve(split(&ds, s), &ks)?;
                    println!("k,recall");
                    for (k, r) in ks.iter().zip(recalls) {
                        println!("{k},{r}");
                    }
                }
            }
        }
        Command::Eval { run, split: s, out } => {
            let config = run.load()?;
            let (vocab, model, retriever) = load_run(&run.run)?;
            let ds = Dataset::load(&config.data_dir)?;
            let builder = tesel_core::pairing::LayoutBuilder::new(&vocab, &ds.space, config.encoder.max_len);
            let mut inference = InferenceConfig {
                mode: config.train.mode,
                chunk_k: config.chunk_k(),
                tau: config.inference.tau,
                vote_rounds: config.inference.vote_rounds,
                seed: config.inference.seed,
            };
            // Reuse the threshold calibrated during training.
            let stored: Option<MetricsRecord> = fs::read_to_string(run.run.join(METRICS_FILE))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            if inference.tau.is_none() {
                inference.tau = stored.as_ref().and_then(|r| r.tau);
            }
            let cases = split(&ds, s);
            let pools = match (config.retrieval.top_k, &retriever) {
                (Some(k), Some(r)) => Some(r.pools(cases, k)?),
                (Some(_), None) => return Err(Error::MissingArtifact(run.run.join(INDEX_FILE))),
                (None, _) => None,
            };
            let eval = evaluate(&model, &builder, cases, ds.manifest.task, &inference, pools.as_deref())?;
            let out = out.unwrap_or_else(|| {
                run.run.join(format!(
                    "eval-{}",
                    match s {
                        Split::Train => "train",
                        Split::Dev => "dev",
                        Split::Test => "test",
                    }
                ))
            });
            fs::create_dir_all(&out)?;
            let record = MetricsRecord {
                mode: inference.mode,
                metrics: eval.metrics,
                tau: inference.tau,
                chunk_k: inference.chunk_k,
                top_k: config.retrieval.top_k,
                forward_passes: eval.ledger.forward_passes,
                tokens_processed: eval.ledger.tokens_processed,
                epochs_run: stored.as_ref().map_or(0, |r| r.epochs_run),
                dev_metrics: stored.map(|r| r.dev_metrics).unwrap_or_default(),
            };
            fs::write(out.join(METRICS_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
            write_with(&out.join(PREDICTIONS_FILE), |w| write_predictions(w, &eval.predictions))?;
            println!("{}", summarize(&record));
        }
        Command::Bench { run, reps, cases, ks } => {
            let config = run.load()?;
            let (vocab, model, retriever) = load_run(&run.run)?;
            let ds = Dataset::load(&config.data_dir)?;
            let builder = tesel_core::pairing::LayoutBuilder::new(&vocab, &ds.space, config.encoder.max_len);
            let test = &ds.test[..cases.clamp(1, ds.test.len())];
            let pools = match (config.retrieval.top_k, &retriever) {
                (Some(k), Some(r)) => Some(r.pools(test, k)?),
                _ => None,
            };
            let base = InferenceConfig {
                tau: Some(0.5),
                ..InferenceConfig::default()
            };
            let mut configs = vec![(
                "pairwise".to_string(),
                InferenceConfig {
                    mode: Mode::Te,
                    ..base.clone()
                },
            )];
            let ks = if ks.is_empty() { vec![config.chunk_k()] } else { ks };
            for k in ks {
                configs.push((
                    format!("parallel-k{k}"),
                    InferenceConfig {
                        mode: Mode::Parallel,
                        chunk_k: k,
                        ..base.clone()
                    },
                ));
            }
            let rows = bench(&model, &builder, test, &configs, pools.as_deref(), reps)?;
            write_with(&run.run.join("bench.csv"), |w| write_bench_csv(w, &rows))?;
            let table = comparison_table(&rows);
            fs::write(run.run.join(BENCH_TABLE_FILE), &table)?;
            print!("{table}");
        }
        Command::Ablate(args) => {
            let config = args.load()?;
            let prepared = prepare(&config)?;
            write_run_header(&config.out_dir, &config, &prepared)?;
            let table = run_ablation(&config, &prepared)?;
            let md = table.to_markdown();
            fs::write(config.out_dir.join(ABLATION_TABLE_FILE), &md)?;
            fs::write(config.out_dir.join("ablation.csv"), table.to_csv())?;
            print!("{md}");
        }
        Command::SweepK { run, ks } => {
            let config = run.load()?;
            let (_, model, retriever) = load_run(&run.run)?;
            let retriever = retriever.ok_or_else(|| Error::MissingArtifact(run.run.join(INDEX_FILE)))?;
            let no_retrain = RunConfig {
                retrieval: tesel_core::workbench::RetrievalSection {
                    top_k: None,
                    ..config.retrieval.clone()
                },
                ..config.clone()
            };
            let mut prepared = prepare(&no_retrain)?;
            prepared.vocab = tesel_core::Vocabulary::load(&run.run.join(VOCAB_FILE))?;
            let sweep = run_k_sweep(&config, &prepared, &model, &retriever, &ks)?;
            let csv = sweep.to_csv();
            fs::write(run.run.join(SWEEP_FILE), &csv)?;
            print!("{csv}");
            println!("best k = {}", sweep.best_k);
        }
        Command::Report { run } => {
            report(&run)?;
            println!("{}", run.join(tesel_core::workbench::report::REPORT_FILE).display());
        }
    }
    Ok(())
}
