//! Bi-encoder top-k candidate generation and recall diagnostics.
//!
//! Options are embedded once into an [`EmbeddingIndex`]; queries are ranked
//! by cosine similarity with an exact scan.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::inference::ScoredOption;
use crate::pairing::{OptionSpace, SelectionInstance};
use crate::text::{TokenId, Vocabulary};
use crate::training::{Adam, AdamConfig};

/// Unit-norm option embeddings, one row per option in space order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    n: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingIndex {
    /// Wraps precomputed rows; each must have unit norm.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("empty embedding index"));
        }
        let dim = rows[0].len();
        let mut flat = Vec::with_capacity(n * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::shape(format!("index row {i} has length {}", r.len())));
            }
            check_unit(r, i)?;
            flat.extend_from_slice(r);
        }
        Ok(Self { n, dim, rows: flat })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity of `query` (unit norm) with every row.
    pub fn similarities(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::shape(format!(
                "query dim {} vs index dim {}",
                query.len(),
                self.dim
            )));
        }
        Ok((0..self.n)
            .map(|i| self.row(i).iter().zip(query).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// The `k` most similar options, descending; ties by ascending index.
    pub fn top_k_for(&self, query: &[f64], k: usize) -> Result<Vec<ScoredOption>> {
        if k == 0 || k > self.n {
            return Err(Error::invalid(format!("k={k} outside 1..={}", self.n)));
        }
        let mut scored: Vec<ScoredOption> = self
            .similarities(query)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| ScoredOption::new(i, s))
            .collect();
        if k < self.n {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }

    /// Full ranking of all options for `query`.
    pub fn rank_all(&self, query: &[f64]) -> Result<Vec<ScoredOption>> {
        self.top_k_for(query, self.n)
    }

    /// Writes `n`, `dim` as little-endian u64 followed by the row-major f64
    /// values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in &self.rows {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let n = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let dim = u64::from_le_bytes(b) as usize;
        if n == 0 || dim == 0 {
            return Err(Error::Format("index header has a zero dimension".into()));
        }
        let mut raw = vec![0u8; n * dim * 8];
        r.read_exact(&mut raw)?;
        let rows: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for i in 0..n {
            check_unit(&rows[i * dim..(i + 1) * dim], i)?;
        }
        Ok(Self { n, dim, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}

fn check_unit(row: &[f64], i: usize) -> Result<()> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Format(format!("index row {i} has norm {norm}")));
    }
    Ok(())
}

/// Descending score, then ascending option index.
fn rank_order(a: &ScoredOption, b: &ScoredOption) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.option_index.cmp(&b.option_index))
}

/// Text the retriever embeds for an option: its verbalization, or the bare
/// label when the template needs a per-instance entity.
pub fn option_text(space: &OptionSpace, i: usize) -> Result<String> {
    if space.needs_entity() {
        Ok(space.options()[i].clone())
    } else {
        space.verbalize(i, None)
    }
}

fn clip(ids: Vec<TokenId>, max_len: usize) -> Result<Vec<TokenId>> {
    if ids.is_empty() {
        return Err(Error::invalid("text has no tokens"));
    }
    let mut ids = ids;
    ids.truncate(max_len);
    Ok(ids)
}

/// Embeds every option once.
pub fn build_index(
    model: &EncoderModel,
    vocab: &Vocabulary,
    space: &OptionSpace,
) -> Result<EmbeddingIndex> {
    if space.is_empty() {
        return Err(Error::invalid("cannot index an empty option space"));
    }
    let max_len = model.config().max_len;
    let rows = (0..space.len())
        .map(|i| model.bi_encode(&clip(vocab.encode(&option_text(space, i)?), max_len)?))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingIndex::from_rows(rows)
}

/// A bi-encoder with its option index.
#[derive(Debug, Clone)]
pub struct Retriever {
    pub model: EncoderModel,
    pub vocab: Vocabulary,
    pub index: EmbeddingIndex,
}

impl Retriever {
    pub fn new(model: EncoderModel, vocab: Vocabulary, space: &OptionSpace) -> Result<Self> {
        let index = build_index(&model, &vocab, space)?;
        Ok(Self {
            model,
            vocab,
            index,
        })
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let ids = clip(self.vocab.encode(text), self.model.config().max_len)?;
        self.model.bi_encode(&ids)
    }

    pub fn top_k(&self, text: &str, k: usize) -> Result<Vec<ScoredOption>> {
        self.index.top_k_for(&self.embed(text)?, k)
    }

    /// Rank (0-based) of every option for `text`.
    pub fn ranks(&self, text: &str) -> Result<Vec<usize>> {
        let ranking = self.index.rank_all(&self.embed(text)?)?;
        let mut ranks = vec![0; ranking.len()];
        for (r, s) in ranking.iter().enumerate() {
            ranks[s.option_index] = r;
        }
        Ok(ranks)
    }

    /// Full option ranking of every instance's premise.
    pub fn rankings(&self, dataset: &[SelectionInstance]) -> Result<Vec<Vec<usize>>> {
        use rayon::prelude::*;
        dataset
            .par_iter()
            .map(|inst| {
                let q = self.embed(&inst.premise)?;
                Ok(self.index.rank_all(&q)?.into_iter().map(|s| s.option_index).collect())
            })
            .collect()
    }

    /// Top-k candidate lists of every instance, in rank order.
    pub fn pools(&self, dataset: &[SelectionInstance], k: usize) -> Result<Vec<Vec<usize>>> {
        use rayon::prelude::*;
        dataset
            .par_iter()
            .map(|inst| {
                Ok(self
                    .top_k(&inst.premise, k)?
                    .into_iter()
                    .map(|s| s.option_index)
                    .collect())
            })
            .collect()
    }

    pub fn recall_at_k(&self, dataset: &[SelectionInstance], k: usize) -> Result<f64> {
        Ok(self.recall_curve(dataset, &[k])?[0])
    }

    /// Recall@k for each k, ranking every instance once.
    pub fn recall_curve(&self, dataset: &[SelectionInstance], ks: &[usize]) -> Result<Vec<f64>> {
        for &k in ks {
            if k == 0 || k > self.index.len() {
                return Err(Error::invalid(format!("k={k} outside 1..={}", self.index.len())));
            }
        }
        let gold_ranks = dataset
            .iter()
            .map(|inst| {
                let ranks = self.ranks(&inst.premise)?;
                Ok(inst.gold.iter().map(|&g| ranks[g]).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(recall_from_ranks(&gold_ranks, ks))
    }
}

/// Fraction of (instance, gold) pairs whose gold rank is below k, per k.
pub fn recall_from_ranks(gold_ranks: &[Vec<usize>], ks: &[usize]) -> Vec<f64> {
    let total: usize = gold_ranks.iter().map(Vec::len).sum();
    ks.iter()
        .map(|&k| {
            if total == 0 {
                return 0.0;
            }
            let hits = gold_ranks.iter().flatten().filter(|&&r| r < k).count();
            hits as f64 / total as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Softmax temperature of the in-batch contrastive loss.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                layers: 1,
                max_len: 64,
                ..EncoderConfig::default()
            },
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            temperature: 0.1,
            seed: 11,
        }
    }
}

/// Per-step contrastive losses of a retriever run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrieverReport {
    pub losses: Vec<f64>,
    pub seconds: f64,
}

/// Trains a bi-encoder with an in-batch contrastive loss: each premise
/// against the distinct gold options drawn for the batch.
pub fn train_retriever(
    vocab: &Vocabulary,
    space: &OptionSpace,
    dataset: &[SelectionInstance],
    config: &RetrieverConfig,
) -> Result<(Retriever, RetrieverReport)> {
    if dataset.is_empty() {
        return Err(Error::invalid("retriever training set is empty"));
    }
    if config.batch_size == 0 || config.temperature <= 0.0 {
        return Err(Error::Config("retriever batch_size and temperature must be positive".into()));
    }
    let start = Instant::now();
    let mut model = EncoderModel::new(config.encoder.clone(), vocab.len())?;
    let max_len = model.config().max_len;
    let option_ids = (0..space.len())
        .map(|i| clip(vocab.encode(&option_text(space, i)?), max_len))
        .collect::<Result<Vec<_>>>()?;
    let premise_ids = dataset
        .iter()
        .map(|inst| clip(vocab.encode(&inst.premise), max_len))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            learning_rate: config.learning_rate,
            total_steps: config.epochs * steps_per_epoch,
            ..AdamConfig::default()
        },
    );
    let mut report = RetrieverReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut columns: Vec<usize> = Vec::new();
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let gold = &dataset[i].gold;
                if gold.is_empty() {
                    return Err(Error::data(format!("instance {} has no gold", dataset[i].id)));
                }
                let g = gold[rng.random_range(0..gold.len())];
                let col = match columns.iter().position(|&c| c == g) {
                    Some(c) => c,
                    None => {
                        columns.push(g);
                        columns.len() - 1
                    }
                };
                targets.push(col);
            }
            let mut dropout = ChaCha8Rng::seed_from_u64(rng.random());
            let mut graph = model.graph(true);
            let q = batch
                .iter()
                .map(|&i| model.bi_encode_in(&mut graph, &premise_ids[i], Some(&mut dropout)))
                .collect::<Result<Vec<_>>>()?;
            let o = columns
                .iter()
                .map(|&c| model.bi_encode_in(&mut graph, &option_ids[c], Some(&mut dropout)))
                .collect::<Result<Vec<_>>>()?;
            let q = graph.concat_rows(&q)?;
            let o = graph.concat_rows(&o)?;
            let ot = graph.transpose(o)?;
            let logits = graph.matmul(q, ot)?;
            let logits = graph.scale(logits, 1.0 / config.temperature)?;
            let probs = graph.softmax(logits, 1)?;
            let loss = graph.cross_entropy(probs, &targets)?;
            let value = graph.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite("retriever loss"));
            }
            graph.backward(loss)?;
            let grads = graph.take_param_grads();
            drop(graph);
            adam.step(model.params_mut(), &grads)?;
            report.losses.push(value);
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    let retriever = Retriever::new(model, vocab.clone(), space)?;
    Ok((retriever, report))
}
