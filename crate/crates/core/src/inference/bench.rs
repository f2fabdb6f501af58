//! Wall-clock throughput per paradigm.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{candidates, check_pools, score_instance, CostLedger, InferenceConfig};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::pairing::{LayoutBuilder, SelectionInstance};
use crate::training::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub paradigm: String,
    /// Candidates scored per case.
    pub n: usize,
    pub k: usize,
    pub cases: usize,
    /// Exact per-repetition totals.
    pub ledger: CostLedger,
    pub seconds_per_case: f64,
    /// Per-case seconds of every timed repetition.
    pub repetitions: Vec<f64>,
}

impl BenchRow {
    pub fn passes_per_case(&self) -> f64 {
        self.ledger.forward_passes as f64 / self.cases as f64
    }

    pub fn tokens_per_case(&self) -> f64 {
        self.ledger.tokens_processed as f64 / self.cases as f64
    }
}

/// Times each configuration over `dataset`: one untimed warmup pass over
/// the first case, then `reps` (at least 3) timed passes over all cases;
/// reports the median seconds per case.
pub fn bench(
    model: &EncoderModel,
    builder: &LayoutBuilder<'_>,
    dataset: &[SelectionInstance],
    configs: &[(String, InferenceConfig)],
    pools: Option<&[Vec<usize>]>,
    reps: usize,
) -> Result<Vec<BenchRow>> {
    check_pools(pools, dataset.len())?;
    if dataset.is_empty() {
        return Err(Error::invalid("benchmark needs at least one case"));
    }
    let reps = reps.max(3);
    let n_options = builder.space.len();
    // Candidate generation happens before and outside the timed region.
    let mut rows = Vec::with_capacity(configs.len());
    for (name, config) in configs {
        let cands: Vec<Vec<usize>> = (0..dataset.len())
            .map(|i| candidates(n_options, pools, i))
            .collect();
        let chunk_k = match config.mode {
            Mode::Parallel => config.chunk_k,
            _ => 1,
        };
        score_instance(model, builder, &dataset[0], &cands[0], config.mode, chunk_k)?;
        let mut times = Vec::with_capacity(reps);
        let mut ledger = CostLedger::default();
        for _ in 0..reps {
            let mut rep = CostLedger::default();
            let start = Instant::now();
            for (inst, opts) in dataset.iter().zip(&cands) {
                let (_, l) = score_instance(model, builder, inst, opts, config.mode, chunk_k)?;
                rep.merge(&l);
            }
            let secs = start.elapsed().as_secs_f64();
            rep.wall_seconds = secs;
            times.push(secs / dataset.len() as f64);
            ledger = rep;
        }
        let n = cands.iter().map(Vec::len).max().unwrap_or(0);
        rows.push(BenchRow {
            paradigm: name.clone(),
            n,
            k: chunk_k,
            cases: dataset.len(),
            ledger,
            seconds_per_case: median(&times),
            repetitions: times,
        });
    }
    Ok(rows)
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// `paradigm,n,k,passes,tokens,seconds_per_case`, counts per case.
pub fn write_bench_csv(mut w: impl Write, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "paradigm,n,k,passes,tokens,seconds_per_case")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.6}",
            r.paradigm,
            r.n,
            r.k,
            r.passes_per_case(),
            r.tokens_per_case(),
            r.seconds_per_case
        )?;
    }
    Ok(())
}

/// Markdown comparison table, speedups relative to the first row.
pub fn comparison_table(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "| paradigm | n | k | passes/case | tokens/case | s/case | speedup |\n|---|---|---|---|---|---|---|\n",
    );
    let base = rows.first().map(|r| r.seconds_per_case).unwrap_or(0.0);
    for r in rows {
        let speedup = if r.seconds_per_case > 0.0 {
            base / r.seconds_per_case
        } else {
            f64::NAN
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.6} | {:.2}x |\n",
            r.paradigm,
            r.n,
            r.k,
            r.passes_per_case(),
            r.tokens_per_case(),
            r.seconds_per_case,
            speedup
        ));
    }
    out
}
