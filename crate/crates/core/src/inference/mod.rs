//! Option scoring under each paradigm, label selection, voting, evaluation
//! and inference-cost accounting.

mod bench;
mod metrics;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::pairing::{chunk_options, LayoutBuilder, SelectionInstance};
use crate::training::Mode;

pub use bench::{bench, comparison_table, write_bench_csv, BenchRow};
pub use metrics::{example_averaged_prf, Metrics, TaskKind};

/// An option index with its score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredOption {
    pub option_index: usize,
    pub score: f64,
}

impl ScoredOption {
    pub fn new(option_index: usize, score: f64) -> Self {
        Self {
            option_index,
            score,
        }
    }
}

/// Exact pass and token counts plus wall time of an inference run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub forward_passes: u64,
    pub tokens_processed: u64,
    pub wall_seconds: f64,
}

impl CostLedger {
    pub fn record_pass(&mut self, tokens: usize) {
        self.forward_passes += 1;
        self.tokens_processed += tokens as u64;
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.forward_passes += other.forward_passes;
        self.tokens_processed += other.tokens_processed;
        self.wall_seconds += other.wall_seconds;
    }
}

/// One forward pass per option over `[CLS] P [SEP] H [SEP]`; the score is
/// the entailment probability. Used by both pairwise and contextualized
/// models, which need no competing context at inference.
pub fn score_pairwise(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    instance: &SelectionInstance,
    options: &[usize],
) -> Result<(Vec<ScoredOption>, CostLedger)> {
    let start = Instant::now();
    let mut ledger = CostLedger::default();
    let mut scored = Vec::with_capacity(options.len());
    for &o in options {
        let layout = builder.make_te_pair(instance, o)?;
        let p = model.entail_probability(&layout.ids)?;
        ledger.record_pass(layout.len());
        scored.push(ScoredOption::new(o, p));
    }
    ledger.wall_seconds = start.elapsed().as_secs_f64();
    Ok((scored, ledger))
}

/// Scores options `k` at a time: one forward pass per chunk of the given
/// order, `ceil(n / k)` passes in total.
pub fn score_parallel(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    instance: &SelectionInstance,
    options: &[usize],
    k: usize,
) -> Result<(Vec<ScoredOption>, CostLedger)> {
    let start = Instant::now();
    let mut ledger = CostLedger::default();
    let mut scored = Vec::with_capacity(options.len());
    for chunk in chunk_options(options, k)? {
        let layout = builder.make_parallel_pair(instance, &chunk)?;
        let scores = model.parallel_scores(&layout.ids, &layout.option_spans)?;
        ledger.record_pass(layout.len());
        scored.extend(chunk.iter().zip(scores).map(|(&o, s)| ScoredOption::new(o, s)));
    }
    ledger.wall_seconds = start.elapsed().as_secs_f64();
    Ok((scored, ledger))
}

/// Highest-scoring option; ties go to the smallest option index.
pub fn select_single(scored: &[ScoredOption]) -> Result<usize> {
    scored
        .iter()
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.option_index.cmp(&b.option_index))
        })
        .map(|s| s.option_index)
        .ok_or_else(|| Error::invalid("cannot select from zero options"))
}

/// All options scoring strictly above `tau`, ascending by index. May be
/// empty.
pub fn select_multi(scored: &[ScoredOption], tau: f64) -> Vec<usize> {
    let mut out: Vec<usize> = scored
        .iter()
        .filter(|s| s.score > tau)
        .map(|s| s.option_index)
        .collect();
    out.sort_unstable();
    out
}

/// Runs parallel scoring over `rounds` shuffled orders of `options`; each
/// round votes for its top option. Vote ties go to the higher mean score
/// across rounds, then the smaller index.
pub fn majority_vote<R: Rng + ?Sized>(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    instance: &SelectionInstance,
    options: &[usize],
    k: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<usize> {
    Ok(vote_detail(model, builder, instance, options, k, rounds, rng)?.winner)
}

#[derive(Debug, Clone)]
pub struct VoteDetail {
    pub winner: usize,
    pub votes: BTreeMap<usize, usize>,
    /// Per-round winners, in round order.
    pub round_winners: Vec<usize>,
    /// Scores of the unshuffled first round.
    pub first_round: Vec<ScoredOption>,
    pub ledger: CostLedger,
}

pub fn vote_detail<R: Rng + ?Sized>(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    instance: &SelectionInstance,
    options: &[usize],
    k: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<VoteDetail> {
    if rounds == 0 {
        return Err(Error::invalid("majority vote needs at least one round"));
    }
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut score_sums: BTreeMap<usize, f64> = BTreeMap::new();
    let mut round_winners = Vec::with_capacity(rounds);
    let mut ledger = CostLedger::default();
    let mut order = options.to_vec();
    let mut first_round = Vec::new();
    for round in 0..rounds {
        if round > 0 {
            order.shuffle(rng);
        }
        let (scored, l) = score_parallel(model, builder, instance, &order, k)?;
        ledger.merge(&l);
        let winner = select_single(&scored)?;
        *votes.entry(winner).or_default() += 1;
        round_winners.push(winner);
        for s in &scored {
            *score_sums.entry(s.option_index).or_default() += s.score;
        }
        if round == 0 {
            first_round = scored;
        }
    }
    let winner = tally(&votes, &score_sums);
    Ok(VoteDetail {
        winner,
        votes,
        round_winners,
        first_round,
        ledger,
    })
}

/// Most votes, then highest summed (equivalently mean) score, then smallest
/// index.
fn tally(votes: &BTreeMap<usize, usize>, score_sums: &BTreeMap<usize, f64>) -> usize {
    let mut best: Option<(usize, usize, f64)> = None;
    for (&option, &count) in votes {
        let total = score_sums.get(&option).copied().unwrap_or(0.0);
        let better = match best {
            None => true,
            Some((_, bc, bt)) => count > bc || (count == bc && total > bt),
        };
        if better {
            best = Some((option, count, total));
        }
    }
    best.expect("at least one vote").0
}

/// How candidates are produced and scored at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub mode: Mode,
    /// Options per parallel layout.
    pub chunk_k: usize,
    /// Multi-label threshold.
    pub tau: Option<f64>,
    /// Shuffled parallel rounds per instance; 1 disables voting.
    pub vote_rounds: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Parallel,
            chunk_k: 8,
            tau: None,
            vote_rounds: 1,
            seed: 0,
        }
    }
}

/// Candidate options of instance `i`: its retrieved list when `pools` is
/// given (retrieval rank order), otherwise the whole space in index order.
pub fn candidates(n_options: usize, pools: Option<&[Vec<usize>]>, i: usize) -> Vec<usize> {
    match pools {
        Some(p) => p[i].clone(),
        None => (0..n_options).collect(),
    }
}

fn check_pools(pools: Option<&[Vec<usize>]>, n: usize) -> Result<()> {
    match pools {
        Some(p) if p.len() != n => Err(Error::invalid(format!(
            "{} candidate lists for {n} instances",
            p.len()
        ))),
        _ => Ok(()),
    }
}

/// Scores of `options` for one instance under `mode`.
pub fn score_instance(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    instance: &SelectionInstance,
    options: &[usize],
    mode: Mode,
    chunk_k: usize,
) -> Result<(Vec<ScoredOption>, CostLedger)> {
    match mode {
        Mode::Te | Mode::Context => score_pairwise(model, builder, instance, options),
        Mode::Parallel => score_parallel(model, builder, instance, options, chunk_k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Single(usize),
    Multi(Vec<usize>),
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub scores: Vec<(usize, f64)>,
    pub prediction: Prediction,
    pub gold: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<PredictionRecord>,
    pub ledger: CostLedger,
}

/// Scores every instance, selects labels and computes task metrics.
pub fn evaluate(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    dataset: &[SelectionInstance],
    task: TaskKind,
    config: &InferenceConfig,
    pools: Option<&[Vec<usize>]>,
) -> Result<Evaluation> {
    check_pools(pools, dataset.len())?;
    if task == TaskKind::Multi && config.tau.is_none() {
        return Err(Error::Config("multi-label evaluation needs a threshold".into()));
    }
    let n = builder.space.len();
    let start = Instant::now();
    let per_instance = dataset
        .par_iter()
        .enumerate()
        .map(|(i, inst)| -> Result<(PredictionRecord, CostLedger)> {
            let opts = candidates(n, pools, i);
            let (scored, mut ledger, voted) =
                if config.mode == Mode::Parallel && config.vote_rounds > 1 {
                    let mut rng = instance_rng(config.seed, i);
                    let d = vote_detail(
                        model,
                        builder,
                        inst,
                        &opts,
                        config.chunk_k,
                        config.vote_rounds,
                        &mut rng,
                    )?;
                    (d.first_round, d.ledger, Some(d.winner))
                } else {
                    let (s, l) =
                        score_instance(model, builder, inst, &opts, config.mode, config.chunk_k)?;
                    (s, l, None)
                };
            ledger.wall_seconds = 0.0;
            let prediction = match task {
                TaskKind::Single => Prediction::Single(match voted {
                    Some(w) => w,
                    None => select_single(&scored)?,
                }),
                TaskKind::Multi => Prediction::Multi(select_multi(&scored, config.tau.unwrap())),
            };
            let mut scores: Vec<(usize, f64)> =
                scored.iter().map(|s| (s.option_index, s.score)).collect();
            scores.sort_by_key(|s| s.0);
            Ok((
                PredictionRecord {
                    id: inst.id.clone(),
                    scores,
                    prediction,
                    gold: inst.gold.clone(),
                },
                ledger,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ledger = CostLedger::default();
    let mut predictions = Vec::with_capacity(per_instance.len());
    for (p, l) in per_instance {
        ledger.merge(&l);
        predictions.push(p);
    }
    ledger.wall_seconds = start.elapsed().as_secs_f64();
    let metrics = Metrics::from_predictions(task, &predictions)?;
    Ok(Evaluation {
        metrics,
        predictions,
        ledger,
    })
}

pub(crate) fn instance_rng(seed: u64, index: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Writes predictions as JSON lines.
pub fn write_predictions(mut w: impl std::io::Write, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}
