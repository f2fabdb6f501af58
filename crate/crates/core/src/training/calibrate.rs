use serde::{Deserialize, Serialize};

use super::Mode;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::inference::{candidates, example_averaged_prf, score_instance, select_multi, ScoredOption};
use crate::pairing::{LayoutBuilder, SelectionInstance};

/// `{0.01, 0.02, ..., 0.99}`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub tau: f64,
    pub f1: f64,
    /// `(tau, f1)` at every grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Grid point maximizing example-averaged F1; ties go to the larger τ.
pub fn best_threshold(scored: &[Vec<ScoredOption>], golds: &[Vec<usize>]) -> Result<ThresholdScan> {
    if scored.is_empty() || scored.len() != golds.len() {
        return Err(Error::invalid("threshold calibration needs scored dev instances"));
    }
    let gold_refs: Vec<&[usize]> = golds.iter().map(Vec::as_slice).collect();
    let mut curve = Vec::with_capacity(99);
    let mut best = (0.0, f64::NEG_INFINITY);
    for tau in threshold_grid() {
        let preds: Vec<Vec<usize>> = scored.iter().map(|s| select_multi(s, tau)).collect();
        let pred_refs: Vec<&[usize]> = preds.iter().map(Vec::as_slice).collect();
        let (_, _, f1) = example_averaged_prf(&pred_refs, &gold_refs);
        curve.push((tau, f1));
        if f1 >= best.1 {
            best = (tau, f1);
        }
    }
    Ok(ThresholdScan {
        tau: best.0,
        f1: best.1,
        curve,
    })
}

/// Scores every dev instance (over its candidate list when `pools` is given)
/// and picks τ on the grid.
pub fn calibrate_threshold(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    dev: &[SelectionInstance],
    mode: Mode,
    k: usize,
    pools: Option<&[Vec<usize>]>,
) -> Result<ThresholdScan> {
    use rayon::prelude::*;
    if dev.is_empty() {
        return Err(Error::invalid("dev set is empty"));
    }
    let n = builder.space.len();
    if pools.is_some_and(|p| p.len() != dev.len()) {
        return Err(Error::invalid("one candidate list per dev instance is required"));
    }
    let scored = dev
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let opts = candidates(n, pools, i);
            Ok(score_instance(model, builder, inst, &opts, mode, k)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<Vec<usize>> = dev.iter().map(|i| i.gold.clone()).collect();
    best_threshold(&scored, &golds)
}

/// Evaluates each candidate `k` (ascending) and returns the best with the
/// full curve; ties go to the smaller, cheaper `k`.
pub fn select_k<F>(candidate_ks: &[usize], mut evaluate: F) -> Result<(usize, Vec<(usize, f64)>)>
where
    F: FnMut(usize) -> Result<f64>,
{
    if candidate_ks.is_empty() {
        return Err(Error::invalid("no candidate k values"));
    }
    let mut ks = candidate_ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut curve = Vec::with_capacity(ks.len());
    let mut best = (ks[0], f64::NEG_INFINITY);
    for k in ks {
        let metric = evaluate(k)?;
        curve.push((k, metric));
        if metric > best.1 {
            best = (k, metric);
        }
    }
    Ok((best.0, curve))
}

/// Display smoothing width: 2% of the run's steps.
pub fn smoothing_sigma(total_steps: usize) -> f64 {
    0.02 * total_steps as f64
}

/// Discrete Gaussian smoothing, weights renormalized at the edges. The
/// kernel is cut where weights fall below 1e-18 of the peak, which is
/// invisible at f64 precision; `sigma` near zero returns the input.
pub fn gaussian_smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || values.is_empty() {
        return values.to_vec();
    }
    let radius = (sigma * (2.0 * 18.0 * std::f64::consts::LN_10).sqrt()).ceil() as usize;
    let weights: Vec<f64> = (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let (mut num, mut den) = (0.0, 0.0);
            for (j, v) in values.iter().enumerate().take(hi + 1).skip(lo) {
                let w = weights[i.abs_diff(j)];
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect()
}
