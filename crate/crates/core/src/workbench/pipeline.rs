//! End-to-end runs: data preparation, candidate retrieval, training with
//! dev monitoring, threshold calibration and test evaluation; plus the
//! ablation and k-sweep harnesses built on them.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::Dataset;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::inference::{
    evaluate, write_predictions, Evaluation, InferenceConfig, Metrics, TaskKind,
};
use crate::pairing::{LayoutBuilder, SelectionInstance, ENTITY_SLOT, LABEL_SLOT};
use crate::retrieval::{recall_from_ranks, train_retriever, EmbeddingIndex, Retriever, RetrieverReport};
use crate::text::Vocabulary;
use crate::training::{
    calibrate_threshold, select_k, train_with, EpochVerdict, Mode, ThresholdScan, TrainConfig,
    TrainReport,
};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const RUN_MANIFEST: &str = "run_manifest.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const RETRIEVER_FILE: &str = "retriever.ckpt";
pub const INDEX_FILE: &str = "index.bin";
pub const LOSSES_FILE: &str = "losses.csv";
pub const RETRIEVER_LOSSES_FILE: &str = "retriever_losses.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Vocabulary over training premises, option labels and template words.
pub fn build_vocab(dataset: &Dataset, min_count: usize) -> Result<Vocabulary> {
    let mut corpus: Vec<String> = dataset.train.iter().map(|i| i.premise.clone()).collect();
    corpus.extend(dataset.train.iter().filter_map(|i| i.entity.clone()));
    corpus.extend(dataset.space.options().iter().cloned());
    corpus.push(
        dataset
            .space
            .template()
            .replace(LABEL_SLOT, " ")
            .replace(ENTITY_SLOT, " "),
    );
    // Options must never be cut by the count threshold.
    let mut vocab = Vocabulary::build(&corpus, min_count)?;
    if min_count > 1 {
        let mut tokens: Vec<String> = (crate::text::RESERVED.len()..vocab.len())
            .filter_map(|i| vocab.token(i).map(str::to_string))
            .collect();
        let mut seen: std::collections::BTreeSet<String> = tokens.iter().cloned().collect();
        for o in dataset.space.options() {
            for t in crate::text::normalize(o) {
                if seen.insert(t.clone()) {
                    tokens.push(t);
                }
            }
        }
        vocab = Vocabulary::from_tokens(tokens)?;
    }
    Ok(vocab)
}

/// Retriever plus the top-k candidate lists of every split.
#[derive(Debug, Clone)]
pub struct RetrievalArtifacts {
    pub retriever: Retriever,
    pub report: RetrieverReport,
    pub top_k: usize,
    pub train: Vec<Vec<usize>>,
    pub dev: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub vocab: Vocabulary,
    pub retrieval: Option<RetrievalArtifacts>,
}

impl Prepared {
    pub fn builder(&self, config: &RunConfig) -> LayoutBuilder<'_> {
        LayoutBuilder::new(&self.vocab, &self.dataset.space, config.encoder.max_len)
    }

    pub fn task(&self) -> TaskKind {
        self.dataset.manifest.task
    }
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    prepare_with(config, Dataset::load(&config.data_dir)?)
}

/// Builds the vocabulary and, when `retrieval.top_k` is set, trains the
/// retriever and fixes every split's candidate lists.
pub fn prepare_with(config: &RunConfig, dataset: Dataset) -> Result<Prepared> {
    config.validate()?;
    let vocab = build_vocab(&dataset, config.min_count)?;
    let retrieval = match config.retrieval.top_k {
        None => None,
        Some(k) => {
            if k > dataset.space.len() {
                return Err(Error::Config(format!(
                    "top_k {k} exceeds the {} options",
                    dataset.space.len()
                )));
            }
            let (retriever, report) =
                train_retriever(&vocab, &dataset.space, &dataset.train, &config.retrieval.trainer)?;
            Some(RetrievalArtifacts {
                train: retriever.pools(&dataset.train, k)?,
                dev: retriever.pools(&dataset.dev, k)?,
                test: retriever.pools(&dataset.test, k)?,
                retriever,
                report,
                top_k: k,
            })
        }
    };
    Ok(Prepared {
        dataset,
        vocab,
        retrieval,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: EncoderModel,
    pub report: TrainReport,
    pub calibration: Option<ThresholdScan>,
    pub inference: InferenceConfig,
    pub test: Evaluation,
    pub used_candidates: bool,
}

fn inference_config(config: &RunConfig, mode: Mode) -> InferenceConfig {
    InferenceConfig {
        mode,
        chunk_k: config.chunk_k(),
        tau: config.inference.tau,
        vote_rounds: config.inference.vote_rounds,
        seed: config.inference.seed,
    }
}

/// Dev accuracy, or for multi-label tasks the F1 at the calibrated τ.
pub fn dev_metric(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    dev: &[SelectionInstance],
    task: TaskKind,
    inference: &InferenceConfig,
    pools: Option<&[Vec<usize>]>,
) -> Result<f64> {
    match task {
        TaskKind::Single => {
            Ok(evaluate(model, builder, dev, task, inference, pools)?.metrics.primary())
        }
        TaskKind::Multi => match inference.tau {
            Some(_) => Ok(evaluate(model, builder, dev, task, inference, pools)?.metrics.primary()),
            None => Ok(calibrate_threshold(model, builder, dev, inference.mode, inference.chunk_k, pools)?.f1),
        },
    }
}

/// Trains one paradigm from scratch and evaluates it on the test split.
/// With `use_candidates`, training pools, dev and test scoring are
/// restricted to the retrieved top-k lists.
pub fn run_paradigm(
    config: &RunConfig,
    prepared: &Prepared,
    train: &TrainConfig,
    use_candidates: bool,
) -> Result<RunOutcome> {
    run_paradigm_with(config, prepared, train, use_candidates, |_, _| {})
}

/// [`run_paradigm`] with a callback receiving each epoch's index and dev
/// metric.
pub fn run_paradigm_with(
    config: &RunConfig,
    prepared: &Prepared,
    train: &TrainConfig,
    use_candidates: bool,
    mut progress: impl FnMut(usize, f64),
) -> Result<RunOutcome> {
    train.validate()?;
    let retrieval = match (use_candidates, &prepared.retrieval) {
        (false, _) => None,
        (true, Some(r)) => Some(r),
        (true, None) => {
            return Err(Error::Config("candidates requested but retrieval.top_k is unset".into()))
        }
    };
    let builder = prepared.builder(config);
    let ds = &prepared.dataset;
    let task = prepared.task();
    let mut inference = inference_config(config, train.mode);
    let mut model = EncoderModel::new(config.encoder.clone(), prepared.vocab.len())?;
    let dev_pools = retrieval.map(|r| r.dev.as_slice());
    let report = train_with(
        &mut model,
        &builder,
        &ds.train,
        train,
        retrieval.map(|r| r.train.as_slice()),
        |epoch, m| {
            let metric = dev_metric(m, &builder, &ds.dev, task, &inference, dev_pools)?;
            progress(epoch, metric);
            Ok(EpochVerdict {
                metric: Some(metric),
                stop: config.early_stop.is_some_and(|t| metric >= t),
            })
        },
    )?;
    let calibration = if task == TaskKind::Multi && inference.tau.is_none() {
        let scan = calibrate_threshold(&model, &builder, &ds.dev, train.mode, inference.chunk_k, dev_pools)?;
        inference.tau = Some(scan.tau);
        Some(scan)
    } else {
        None
    };
    let test = evaluate(
        &model,
        &builder,
        &ds.test,
        task,
        &inference,
        retrieval.map(|r| r.test.as_slice()),
    )?;
    Ok(RunOutcome {
        model,
        report,
        calibration,
        inference,
        test,
        used_candidates: retrieval.is_some(),
    })
}

/// Test metrics and cost, as stored in `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mode: Mode,
    pub metrics: Metrics,
    pub tau: Option<f64>,
    pub chunk_k: usize,
    pub top_k: Option<usize>,
    pub forward_passes: u64,
    pub tokens_processed: u64,
    pub epochs_run: usize,
    pub dev_metrics: Vec<Option<f64>>,
}

impl MetricsRecord {
    pub fn from_outcome(outcome: &RunOutcome, top_k: Option<usize>) -> Self {
        Self {
            mode: outcome.inference.mode,
            metrics: outcome.test.metrics,
            tau: outcome.inference.tau,
            chunk_k: outcome.inference.chunk_k,
            top_k,
            forward_passes: outcome.test.ledger.forward_passes,
            tokens_processed: outcome.test.ledger.tokens_processed,
            epochs_run: outcome.report.epochs_run(),
            dev_metrics: outcome.report.dev_metrics.clone(),
        }
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Resolved config plus a manifest of seeds and data provenance.
pub fn write_run_header(dir: &Path, config: &RunConfig, prepared: &Prepared) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), config.to_toml()?)?;
    let m = &prepared.dataset.manifest;
    let mut text = String::new();
    text.push_str(&format!("dataset = {}\n", m.name));
    text.push_str(&format!("data_dir = {}\n", config.data_dir.display()));
    if let Some(p) = m.profile {
        text.push_str(&format!("profile = {}\n", p.name()));
    }
    if let Some(s) = m.seed {
        text.push_str(&format!("data_seed = {s}\n"));
    }
    text.push_str(&format!("options = {}\n", prepared.dataset.space.len()));
    text.push_str(&format!(
        "splits = {}/{}/{}\n",
        prepared.dataset.train.len(),
        prepared.dataset.dev.len(),
        prepared.dataset.test.len()
    ));
    text.push_str(&format!("vocab_size = {}\n", prepared.vocab.len()));
    text.push_str(&format!("encoder_seed = {}\n", config.encoder.seed));
    text.push_str(&format!("train_seed = {}\n", config.train.seed));
    text.push_str(&format!("retriever_seed = {}\n", config.retrieval.trainer.seed));
    text.push_str(&format!("inference_seed = {}\n", config.inference.seed));
    fs::write(dir.join(RUN_MANIFEST), text)?;
    prepared.vocab.save(&dir.join(VOCAB_FILE))?;
    if let Some(r) = &prepared.retrieval {
        r.retriever.model.save(&dir.join(RETRIEVER_FILE))?;
        r.retriever.index.save(&dir.join(INDEX_FILE))?;
        write_file(&dir.join(RETRIEVER_LOSSES_FILE), |w| {
            TrainReport {
                losses: r.report.losses.clone(),
                ..TrainReport::default()
            }
            .write_csv(w)
        })?;
    }
    Ok(())
}

/// Everything a `train` run leaves behind.
pub fn write_run_artifacts(
    dir: &Path,
    config: &RunConfig,
    prepared: &Prepared,
    outcome: &RunOutcome,
) -> Result<()> {
    write_run_header(dir, config, prepared)?;
    outcome.model.save(&dir.join(MODEL_FILE))?;
    write_file(&dir.join(LOSSES_FILE), |w| outcome.report.write_csv(w))?;
    let top_k = outcome
        .used_candidates
        .then(|| prepared.retrieval.as_ref().map(|r| r.top_k))
        .flatten();
    let record = MetricsRecord::from_outcome(outcome, top_k);
    fs::write(dir.join(METRICS_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    write_file(&dir.join(PREDICTIONS_FILE), |w| {
        write_predictions(w, &outcome.test.predictions)
    })?;
    Ok(())
}

/// Reloads the vocabulary, model and optional retriever of a run directory.
pub fn load_run(dir: &Path) -> Result<(Vocabulary, EncoderModel, Option<Retriever>)> {
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let model = EncoderModel::load(&dir.join(MODEL_FILE))?;
    let retriever = if dir.join(RETRIEVER_FILE).exists() {
        Some(Retriever {
            model: EncoderModel::load(&dir.join(RETRIEVER_FILE))?,
            vocab: vocab.clone(),
            index: EmbeddingIndex::load(&dir.join(INDEX_FILE))?,
        })
    } else {
        None
    };
    Ok((vocab, model, retriever))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub paradigm: String,
    pub train_mode: Mode,
    pub candidates: String,
    pub metrics: Metrics,
    pub passes_per_case: f64,
    pub tokens_per_case: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub task: TaskKind,
    pub top_k: usize,
    pub test_recall: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "Test recall@{} of the shared candidates: {:.4}\n\n",
            self.top_k, self.test_recall
        );
        match self.task {
            TaskKind::Single => {
                out.push_str("| paradigm | train mode | candidates | accuracy | passes/case | tokens/case |\n");
                out.push_str("|---|---|---|---|---|---|\n");
                for r in &self.rows {
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.4} | {:.2} | {:.2} |\n",
                        r.paradigm,
                        r.train_mode.name(),
                        r.candidates,
                        r.metrics.accuracy.unwrap_or(0.0),
                        r.passes_per_case,
                        r.tokens_per_case
                    ));
                }
            }
            TaskKind::Multi => {
                out.push_str("| paradigm | train mode | candidates | precision | recall | F1 | passes/case | tokens/case |\n");
                out.push_str("|---|---|---|---|---|---|---|---|\n");
                for r in &self.rows {
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.2} | {:.2} |\n",
                        r.paradigm,
                        r.train_mode.name(),
                        r.candidates,
                        r.metrics.precision.unwrap_or(0.0),
                        r.metrics.recall.unwrap_or(0.0),
                        r.metrics.f1.unwrap_or(0.0),
                        r.passes_per_case,
                        r.tokens_per_case
                    ));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("paradigm,train_mode,candidates,accuracy,precision,recall,f1,passes_per_case,tokens_per_case\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.paradigm,
                r.train_mode.name(),
                r.candidates,
                opt(r.metrics.accuracy),
                opt(r.metrics.precision),
                opt(r.metrics.recall),
                opt(r.metrics.f1),
                r.passes_per_case,
                r.tokens_per_case
            ));
        }
        out
    }
}

/// The four-row comparison: TE over the full space, TE over the retrieved
/// top-k, Context-TE and Parallel-TE, all on the same splits and the same
/// retrieved candidate lists.
pub fn run_ablation(config: &RunConfig, prepared: &Prepared) -> Result<AblationTable> {
    let retrieval = prepared
        .retrieval
        .as_ref()
        .ok_or_else(|| Error::Config("the ablation needs retrieval.top_k".into()))?;
    let ds = &prepared.dataset;
    let gold_ranks: Vec<Vec<usize>> = ds
        .test
        .iter()
        .zip(&retrieval.test)
        .map(|(inst, pool)| {
            inst.gold
                .iter()
                .map(|g| pool.iter().position(|o| o == g).unwrap_or(usize::MAX))
                .collect()
        })
        .collect();
    let test_recall = recall_from_ranks(&gold_ranks, &[retrieval.top_k])[0];
    let k_label = format!("top-{}", retrieval.top_k);
    let cells = [
        ("TE (full space)", Mode::Te, false),
        ("TE (top-k)", Mode::Te, true),
        ("Context-TE", Mode::Context, true),
        ("Parallel-TE", Mode::Parallel, true),
    ];
    let mut rows = Vec::with_capacity(cells.len());
    for (name, mode, use_candidates) in cells {
        let train = TrainConfig {
            mode,
            augment: config.train.augment && mode == Mode::Parallel,
            ..config.train.clone()
        };
        let outcome = run_paradigm(config, prepared, &train, use_candidates)?;
        let cases = ds.test.len() as f64;
        rows.push(AblationRow {
            paradigm: name.to_string(),
            train_mode: mode,
            candidates: if use_candidates { k_label.clone() } else { "full".into() },
            metrics: outcome.test.metrics,
            passes_per_case: outcome.test.ledger.forward_passes as f64 / cases,
            tokens_per_case: outcome.test.ledger.tokens_processed as f64 / cases,
        });
    }
    Ok(AblationTable {
        task: prepared.task(),
        top_k: retrieval.top_k,
        test_recall,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub recall: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best_k: usize,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,recall,metric\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.k, r.recall, r.metric));
        }
        out
    }
}

/// Dev recall@k and end-task dev metric of a trained `model` for each
/// candidate-list size `k`; the best k maximizes the metric (ties go to
/// the smaller k).
pub fn run_k_sweep(
    config: &RunConfig,
    prepared: &Prepared,
    model: &EncoderModel,
    retriever: &Retriever,
    ks: &[usize],
) -> Result<SweepResult> {
    let ds = &prepared.dataset;
    let n = ds.space.len();
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > n) {
        return Err(Error::Config(format!("sweep ks must lie in 1..={n}")));
    }
    let builder = prepared.builder(config);
    let rankings = retriever.rankings(&ds.dev)?;
    let gold_ranks: Vec<Vec<usize>> = ds
        .dev
        .iter()
        .zip(&rankings)
        .map(|(inst, ranking)| {
            let mut ranks = vec![0; n];
            for (r, &o) in ranking.iter().enumerate() {
                ranks[o] = r;
            }
            inst.gold.iter().map(|&g| ranks[g]).collect()
        })
        .collect();
    let inference = inference_config(config, config.train.mode);
    let mut rows = Vec::new();
    let (best_k, _) = select_k(ks, |k| {
        let pools: Vec<Vec<usize>> = rankings.iter().map(|r| r[..k].to_vec()).collect();
        let metric = dev_metric(model, &builder, &ds.dev, prepared.task(), &inference, Some(&pools))?;
        rows.push(SweepRow {
            k,
            recall: recall_from_ranks(&gold_ranks, &[k])[0],
            metric,
        });
        Ok(metric)
    })?;
    Ok(SweepResult { rows, best_k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::workbench::synth::{synth, Profile, SynthSpec};

    fn tiny_config(top_k: Option<usize>) -> RunConfig {
        let mut c = RunConfig::default();
        c.encoder = EncoderConfig {
            layers: 1,
            heads: 2,
            model_dim: 16,
            ff_dim: 32,
            max_len: 64,
            ..EncoderConfig::default()
        };
        c.train.epochs = 2;
        c.train.k = 4;
        c.train.learning_rate = 1e-3;
        c.retrieval.top_k = top_k;
        c.retrieval.trainer.encoder = c.encoder.clone();
        c.retrieval.trainer.epochs = 1;
        c
    }

    fn tiny_data(profile: Profile) -> Dataset {
        synth(&SynthSpec {
            n_options: if profile == Profile::MultiLarge { 1000 } else { 12 },
            n_train: 40,
            n_dev: 10,
            n_test: 10,
            ..SynthSpec::new(profile, 5)
        })
        .unwrap()
    }

    #[test]
    fn vocab_covers_options_and_training_text() {
        let ds = tiny_data(Profile::SingleSmall);
        let v = build_vocab(&ds, 1).unwrap();
        for o in ds.space.options() {
            assert!(!v.encode(o).contains(&crate::text::UNK));
        }
        let strict = build_vocab(&ds, 1000).unwrap();
        for o in ds.space.options() {
            assert!(!strict.encode(o).contains(&crate::text::UNK));
        }
    }

    #[test]
    fn run_writes_reloadable_artifacts() {
        let config = tiny_config(Some(5));
        let prepared = prepare_with(&config, tiny_data(Profile::SingleSmall)).unwrap();
        let outcome = run_paradigm(&config, &prepared, &config.train, true).unwrap();
        assert_eq!(outcome.report.dev_metrics.len(), 2);
        assert_eq!(outcome.test.ledger.forward_passes, 10 * 2);
        let dir = tempfile::tempdir().unwrap();
        write_run_artifacts(dir.path(), &config, &prepared, &outcome).unwrap();
        let (vocab, model, retriever) = load_run(dir.path()).unwrap();
        assert_eq!(vocab, prepared.vocab);
        assert_eq!(model.params(), outcome.model.params());
        assert_eq!(retriever.unwrap().index, prepared.retrieval.as_ref().unwrap().retriever.index);
        let resolved = fs::read_to_string(dir.path().join(RESOLVED_CONFIG)).unwrap();
        assert_eq!(RunConfig::from_toml(&resolved, &[]).unwrap(), config);
    }

    #[test]
    fn candidates_require_retrieval() {
        let config = tiny_config(None);
        let prepared = prepare_with(&config, tiny_data(Profile::SingleSmall)).unwrap();
        assert!(matches!(
            run_paradigm(&config, &prepared, &config.train, true),
            Err(Error::Config(_))
        ));
        assert!(run_ablation(&config, &prepared).is_err());
    }

    #[test]
    fn ablation_has_four_rows_on_shared_candidates() {
        let mut config = tiny_config(Some(4));
        config.train.epochs = 1;
        let prepared = prepare_with(&config, tiny_data(Profile::SingleSmall)).unwrap();
        let table = run_ablation(&config, &prepared).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0].candidates, "full");
        assert_eq!(table.rows[0].passes_per_case, 12.0);
        assert_eq!(table.rows[1].passes_per_case, 4.0);
        assert_eq!(table.rows[3].passes_per_case, 1.0);
        assert_eq!(table.to_markdown().lines().count(), 2 + 2 + 4);
    }

    #[test]
    fn sweep_recall_is_monotone_and_exhaustive() {
        let config = tiny_config(Some(4));
        let prepared = prepare_with(&config, tiny_data(Profile::SingleSmall)).unwrap();
        let outcome = run_paradigm(&config, &prepared, &config.train, true).unwrap();
        let retriever = &prepared.retrieval.as_ref().unwrap().retriever;
        let sweep = run_k_sweep(&config, &prepared, &outcome.model, retriever, &[12, 1, 4, 2]).unwrap();
        let ks: Vec<usize> = sweep.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![1, 2, 4, 12]);
        assert!(sweep.rows.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert_eq!(sweep.rows[3].recall, 1.0);
        assert!(sweep.to_csv().starts_with("k,recall,metric\n1,"));
    }
}
