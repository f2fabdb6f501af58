//! Losses, the optimizer, epoch loops for all three paradigms, and dev-set
//! selection of the threshold and `k`.

mod calibrate;
mod optim;

use std::io::{BufRead, Write};
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::bce_value;
use crate::numerics::LOG_EPS;
use crate::pairing::{LayoutBuilder, LayoutKind, LayoutedInput, SelectionInstance};

pub use calibrate::{
    best_threshold, calibrate_threshold, gaussian_smooth, select_k, smoothing_sigma,
    threshold_grid, ThresholdScan,
};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Te,
    Context,
    Parallel,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Te => "te",
            Mode::Context => "context",
            Mode::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "te" => Ok(Mode::Te),
            "context" => Ok(Mode::Context),
            "parallel" => Ok(Mode::Parallel),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// How non-gold slots of a parallel training layout are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    /// Uniformly from the candidate pool.
    Random,
    /// The highest-ranked non-gold candidates, in pool order.
    Ranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Competing contexts (context) or options per layout (parallel);
    /// ignored by te.
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Shuffle augmentation; parallel only.
    pub augment: bool,
    /// Non-gold pairs per gold pair for te/context.
    pub negative_ratio: f64,
    pub fill: FillPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Parallel,
            k: 8,
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-4,
            warmup_fraction: 0.05,
            seed: 13,
            augment: false,
            negative_ratio: 1.0,
            fill: FillPolicy::Random,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.augment && self.mode != Mode::Parallel {
            return Err(Error::Config("augment requires mode = parallel".into()));
        }
        if self.mode == Mode::Parallel && self.k == 0 {
            return Err(Error::Config("parallel training needs k >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be a finite nonnegative number".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if !(self.negative_ratio >= 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::Config("negative_ratio must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss after every optimizer step.
    pub losses: Vec<f64>,
    /// Dev metric after each epoch, when a monitor supplied one.
    pub dev_metrics: Vec<Option<f64>>,
    pub epoch_seconds: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epoch_seconds.len()
    }

    /// `step,loss` lines, 1-based steps.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "step,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, l)?;
        }
        Ok(())
    }

    /// Reads the loss column back from [`TrainReport::write_csv`] output.
    pub fn read_losses(r: impl BufRead) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let value = line
                .split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad loss line {}: {line:?}", n + 1)))?;
            out.push(value);
        }
        Ok(out)
    }
}

/// What a monitor decides after an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochVerdict {
    pub metric: Option<f64>,
    pub stop: bool,
}

/// `-ln p` of the labelled class, with `p` floored at 1e-12.
pub fn ce_loss(probs: (f64, f64), entail: bool) -> f64 {
    let p = if entail { probs.0 } else { probs.1 };
    -p.max(LOG_EPS).ln()
}

/// Mean binary cross-entropy over `k` scores.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(bce_value(scores, labels))
}

/// Draws `n` items of `pool` uniformly without replacement, in draw order.
fn sample_from<R: Rng + ?Sized>(pool: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    let n = n.min(pool.len());
    index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Builds one epoch of training layouts.
///
/// `pools[i]`, when present, lists instance `i`'s candidates (retrieval
/// order); otherwise the full option space is the pool.
pub fn epoch_layouts<R: Rng + ?Sized>(
    builder: &LayoutBuilder<'_>,
    dataset: &[SelectionInstance],
    config: &TrainConfig,
    pools: Option<&[Vec<usize>]>,
    rng: &mut R,
) -> Result<Vec<LayoutedInput>> {
    let n = builder.space.len();
    let all: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for (i, inst) in dataset.iter().enumerate() {
        if inst.gold.is_empty() {
            return Err(Error::data(format!("training instance {} has no gold", inst.id)));
        }
        let pool: &[usize] = match pools {
            Some(p) => &p[i],
            None => &all,
        };
        let negatives: Vec<usize> = pool.iter().copied().filter(|&o| !inst.is_gold(o)).collect();
        match config.mode {
            Mode::Te | Mode::Context => {
                let want = (config.negative_ratio * inst.gold.len() as f64).round() as usize;
                let mut options = inst.gold.clone();
                options.extend(sample_from(&negatives, want, rng));
                for &o in &options {
                    let layout = if config.mode == Mode::Te {
                        builder.make_te_pair(inst, o)?
                    } else {
                        let ctx: Vec<usize> = pool.iter().copied().filter(|&c| c != o).collect();
                        let k = config.k.min(ctx.len());
                        builder.make_context_pair(inst, o, &ctx, k, rng)?
                    };
                    out.push(layout);
                }
            }
            Mode::Parallel => {
                if pool.is_empty() {
                    return Err(Error::data(format!("instance {} has an empty candidate pool", inst.id)));
                }
                let k = config.k;
                let mut options = if inst.gold.len() > k {
                    sample_from(&inst.gold, k, rng)
                } else {
                    inst.gold.clone()
                };
                let room = k - options.len();
                match config.fill {
                    FillPolicy::Random => options.extend(sample_from(&negatives, room, rng)),
                    FillPolicy::Ranked => options.extend(negatives.iter().take(room)),
                }
                options.shuffle(rng);
                let golds = options.iter().filter(|&&o| inst.is_gold(o)).count();
                if config.augment && golds == 1 {
                    let len = options.len();
                    out.extend(builder.shuffle_augment(inst, &options, len, rng)?);
                } else {
                    out.push(builder.make_parallel_pair(inst, &options)?);
                }
            }
        }
    }
    Ok(out)
}

/// Loss of one layout and its parameter gradients.
fn layout_loss(
    model: &EncoderModel,
    layout: &LayoutedInput,
    dropout_seed: u64,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut g = model.graph(true);
    let reps = model.forward(&mut g, &layout.ids, Some(&mut rng))?;
    let loss = match layout.kind {
        LayoutKind::Pair | LayoutKind::Context => {
            let probs = model.classify_in(&mut g, reps)?;
            g.cross_entropy(probs, &[if layout.label() { 0 } else { 1 }])?
        }
        LayoutKind::Parallel => {
            let scores = model.score_in(&mut g, reps, &layout.option_spans)?;
            g.bce(scores, &layout.labels)?
        }
    };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    g.backward(loss)?;
    Ok((value, g.take_param_grads()))
}

fn dropout_seed(seed: u64, step: usize, slot: usize) -> u64 {
    let mut z = seed
        ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (slot as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 31;
    z
}

/// Trains without a monitor.
pub fn train(
    model: &mut EncoderModel,
    builder: &LayoutBuilder<'_>,
    dataset: &[SelectionInstance],
    config: &TrainConfig,
    pools: Option<&[Vec<usize>]>,
) -> Result<TrainReport> {
    train_with(model, builder, dataset, config, pools, |_, _| Ok(EpochVerdict::default()))
}

/// Trains for `config.epochs`, calling `monitor` after each epoch; the
/// monitor may record a dev metric and stop training early.
///
/// Each batch's layouts are processed on the worker pool; their gradients
/// are summed in batch order so results do not depend on scheduling.
pub fn train_with<F>(
    model: &mut EncoderModel,
    builder: &LayoutBuilder<'_>,
    dataset: &[SelectionInstance],
    config: &TrainConfig,
    pools: Option<&[Vec<usize>]>,
    mut monitor: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &EncoderModel) -> Result<EpochVerdict>,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(p) = pools {
        if p.len() != dataset.len() {
            return Err(Error::invalid("one candidate pool per training instance is required"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    let mut adam: Option<Adam> = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut layouts = epoch_layouts(builder, dataset, config, pools, &mut rng)?;
        layouts.shuffle(&mut rng);
        let adam = adam.get_or_insert_with(|| {
            // Layout counts per epoch are stable (fixed gold and negative
            // counts), so the first epoch sizes the schedule.
            let steps = layouts.len().div_ceil(config.batch_size) * config.epochs;
            Adam::new(
                model.params(),
                AdamConfig {
                    learning_rate: config.learning_rate,
                    warmup_fraction: config.warmup_fraction,
                    total_steps: steps,
                    ..AdamConfig::default()
                },
            )
        });
        for batch in layouts.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(slot, l)| layout_loss(model, l, dropout_seed(config.seed, step, slot)))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut sum: Vec<Option<Vec<f64>>> = vec![None; model.params().len()];
            let mut loss = 0.0;
            for (value, grads) in results {
                loss += value;
                for (acc, g) in sum.iter_mut().zip(grads) {
                    let Some(g) = g else { continue };
                    match acc {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                        None => *acc = Some(g),
                    }
                }
            }
            for g in sum.iter_mut().flatten() {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            adam.step(model.params_mut(), &sum)?;
            if !model.all_finite() {
                return Err(Error::NonFinite("parameters after update"));
            }
            report.losses.push(loss * scale);
            step += 1;
        }
        report.epoch_seconds.push(start.elapsed().as_secs_f64());
        let verdict = monitor(epoch, model)?;
        report.dev_metrics.push(verdict.metric);
        if verdict.stop {
            report.stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
