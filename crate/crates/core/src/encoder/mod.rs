//! Mini pre-norm transformer encoder with two output heads.
//!
//! * `cls_head`: affine map of the `[CLS]` row to (entail, non-entail)
//!   logits, used by pairwise and contextualized entailment.
//! * `scorer_head`: MLP `d -> d -> 1` followed by a sigmoid, applied to the
//!   mean-pooled span of every hypothesis in a parallel layout. One scorer
//!   is shared by all option positions.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::text::TokenId;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub use_positions: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 256,
            max_len: 256,
            dropout: 0.1,
            use_positions: true,
            seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 {
            return bad("layers, heads and model_dim must be positive");
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad("model_dim must be divisible by heads");
        }
        if self.model_dim < 2 {
            return bad("model_dim must be at least 2");
        }
        if self.ff_dim == 0 || self.max_len == 0 {
            return bad("ff_dim and max_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Top-layer token representations, one row per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenReps(Tensor);

impl TokenReps {
    pub fn new(t: Tensor) -> Result<Self> {
        t.dims2()?;
        Ok(Self(t))
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Half-open token range `[start, end)`.
pub type Span = (usize, usize);

/// Row 0 of the representations, i.e. the `[CLS]` token.
pub fn cls_vector(reps: &TokenReps) -> Result<Vec<f64>> {
    if reps.is_empty() {
        return Err(Error::invalid("empty token representations"));
    }
    Ok(reps.row(0).to_vec())
}

/// Elementwise mean of rows `start..end`.
pub fn span_mean_pool(reps: &TokenReps, span: Span) -> Result<Vec<f64>> {
    let (start, end) = span;
    if start >= end || end > reps.len() {
        return Err(Error::invalid(format!(
            "span {start}..{end} invalid for {} tokens",
            reps.len()
        )));
    }
    let mut acc = vec![0.0; reps.dim()];
    for i in start..end {
        acc.iter_mut().zip(reps.row(i)).for_each(|(a, v)| *a += v);
    }
    let t = (end - start) as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    Ok(acc)
}

/// Checks that spans are nonempty, ordered, disjoint and within `len`.
pub fn validate_spans(spans: &[Span], len: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, &(s, e)) in spans.iter().enumerate() {
        if s >= e {
            return Err(Error::invalid(format!("span {i} is empty")));
        }
        if e > len {
            return Err(Error::invalid(format!("span {i} ends past {len} tokens")));
        }
        if i > 0 && s < prev_end {
            return Err(Error::invalid(format!("span {i} overlaps its predecessor")));
        }
        prev_end = e;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct LayerParams {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct ParamIndex {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerParams>,
    final_g: usize,
    final_b: usize,
    cls_w: usize,
    cls_b: usize,
    scorer_w1: usize,
    scorer_b1: usize,
    scorer_w2: usize,
    scorer_b2: usize,
}

/// Parameter layout: names, shapes and init std (0 = zeros, NaN = ones).
struct Layout {
    entries: Vec<(String, Vec<usize>, f64)>,
}

impl Layout {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> usize {
        self.entries.push((name.into(), shape.to_vec(), std));
        self.entries.len() - 1
    }
}

fn layout(config: &EncoderConfig, vocab_size: usize) -> (Layout, ParamIndex) {
    let d = config.model_dim;
    let ff = config.ff_dim;
    let ones = f64::NAN;
    let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    let resid = lin(d) / ((2 * config.layers) as f64).sqrt();
    let mut l = Layout {
        entries: Vec::new(),
    };
    let tok_emb = l.add("tok_emb", &[vocab_size, d], 1.0);
    let pos_emb = l.add("pos_emb", &[config.max_len, d], 0.5);
    let layers = (0..config.layers)
        .map(|i| {
            let p = |s: &str| format!("layer{i}.{s}");
            LayerParams {
                ln1_g: l.add(p("ln1.gain"), &[d], ones),
                ln1_b: l.add(p("ln1.bias"), &[d], 0.0),
                wq: l.add(p("attn.wq"), &[d, d], lin(d)),
                bq: l.add(p("attn.bq"), &[d], 0.0),
                wk: l.add(p("attn.wk"), &[d, d], lin(d)),
                bk: l.add(p("attn.bk"), &[d], 0.0),
                wv: l.add(p("attn.wv"), &[d, d], lin(d)),
                bv: l.add(p("attn.bv"), &[d], 0.0),
                wo: l.add(p("attn.wo"), &[d, d], resid),
                bo: l.add(p("attn.bo"), &[d], 0.0),
                ln2_g: l.add(p("ln2.gain"), &[d], ones),
                ln2_b: l.add(p("ln2.bias"), &[d], 0.0),
                w1: l.add(p("ff.w1"), &[d, ff], lin(d)),
                b1: l.add(p("ff.b1"), &[ff], 0.0),
                w2: l.add(p("ff.w2"), &[ff, d], lin(ff) / ((2 * config.layers) as f64).sqrt()),
                b2: l.add(p("ff.b2"), &[d], 0.0),
            }
        })
        .collect();
    let index = ParamIndex {
        tok_emb,
        pos_emb,
        layers,
        final_g: l.add("final_ln.gain", &[d], ones),
        final_b: l.add("final_ln.bias", &[d], 0.0),
        cls_w: l.add("cls_head.w", &[d, 2], lin(d)),
        cls_b: l.add("cls_head.b", &[2], 0.0),
        scorer_w1: l.add("scorer_head.w1", &[d, d], lin(d)),
        scorer_b1: l.add("scorer_head.b1", &[d], 0.0),
        scorer_w2: l.add("scorer_head.w2", &[d, 1], lin(d)),
        scorer_b2: l.add("scorer_head.b2", &[1], 0.0),
    };
    (l, index)
}

/// Encoder parameters plus both heads. Parameters are immutable during
/// inference and may be shared across threads.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    config: EncoderConfig,
    vocab_size: usize,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: ParamIndex,
}

impl EncoderModel {
    /// Freshly initialized model; initialization is a pure function of the
    /// config (including its seed) and the vocabulary size.
    pub fn new(config: EncoderConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        let (layout, index) = layout(&config, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::with_capacity(layout.entries.len());
        let mut params = Vec::with_capacity(layout.entries.len());
        for (name, shape, std) in layout.entries {
            let numel: usize = shape.iter().product();
            let data = if std.is_nan() {
                vec![1.0; numel]
            } else if std == 0.0 {
                vec![0.0; numel]
            } else {
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            vocab_size,
            names,
            params,
            index,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Zeroes every parameter of the classification head.
    pub fn zero_cls_head(&mut self) {
        for i in [self.index.cls_w, self.index.cls_b] {
            self.params[i].data_mut().fill(0.0);
        }
    }

    /// Zeroes every parameter of the scorer head.
    pub fn zero_scorer_head(&mut self) {
        for i in [
            self.index.scorer_w1,
            self.index.scorer_b1,
            self.index.scorer_w2,
            self.index.scorer_b2,
        ] {
            self.params[i].data_mut().fill(0.0);
        }
    }

    /// Graph over this model's parameters.
    pub fn graph(&self, requires_grad: bool) -> Graph<'_> {
        Graph::with_params(&self.params, requires_grad)
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn maybe_dropout<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        rng: &mut Option<&mut R>,
    ) -> Result<Var> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 - p;
                let mask = (0..g.value(x).numel())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                g.dropout(x, mask)
            }
            _ => Ok(x),
        }
    }

    fn linear(&self, g: &mut Graph<'_>, x: Var, w: usize, b: usize) -> Result<Var> {
        let w = g.param(w);
        let b = g.param(b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    /// Adds the encoder stack to `g` and returns the `[len × d]` top-layer
    /// representations. Dropout is applied only when `dropout_rng` is given.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        ids: &[TokenId],
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        self.check_ids(ids)?;
        let ix = &self.index;
        let tok = g.param(ix.tok_emb);
        let mut x = g.gather_rows(tok, ids)?;
        if self.config.use_positions {
            let pos = g.param(ix.pos_emb);
            let positions: Vec<usize> = (0..ids.len()).collect();
            let p = g.gather_rows(pos, &positions)?;
            x = g.add(x, p)?;
        }
        x = self.maybe_dropout(g, x, &mut dropout_rng)?;

        let heads = self.config.heads;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        for lp in &ix.layers {
            let (gain, bias) = (g.param(lp.ln1_g), g.param(lp.ln1_b));
            let h = g.layer_norm(x, gain, bias, LN_EPS)?;
            let q = self.linear(g, h, lp.wq, lp.bq)?;
            let k = self.linear(g, h, lp.wk, lp.bk)?;
            let v = self.linear(g, h, lp.wv, lp.bv)?;
            let mut head_outs = Vec::with_capacity(heads);
            for hi in 0..heads {
                let (s, e) = (hi * hd, (hi + 1) * hd);
                let qh = g.slice_cols(q, s, e)?;
                let kh = g.slice_cols(k, s, e)?;
                let vh = g.slice_cols(v, s, e)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale)?;
                let attn = g.softmax(scores, 1)?;
                head_outs.push(g.matmul(attn, vh)?);
            }
            let merged = if heads == 1 {
                head_outs[0]
            } else {
                g.concat_cols(&head_outs)?
            };
            let a = self.linear(g, merged, lp.wo, lp.bo)?;
            let a = self.maybe_dropout(g, a, &mut dropout_rng)?;
            x = g.add(x, a)?;

            let (gain, bias) = (g.param(lp.ln2_g), g.param(lp.ln2_b));
            let h = g.layer_norm(x, gain, bias, LN_EPS)?;
            let f = self.linear(g, h, lp.w1, lp.b1)?;
            let f = g.gelu(f)?;
            let f = self.linear(g, f, lp.w2, lp.b2)?;
            let f = self.maybe_dropout(g, f, &mut dropout_rng)?;
            x = g.add(x, f)?;
        }
        let (gain, bias) = (g.param(ix.final_g), g.param(ix.final_b));
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    /// Token representations of `ids`. In train mode dropout is drawn from
    /// an rng seeded by the config seed, so output is reproducible.
    pub fn encode_tokens(&self, ids: &[TokenId], train_mode: bool) -> Result<TokenReps> {
        let mut g = self.graph(false);
        let reps = if train_mode {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            self.forward(&mut g, ids, Some(&mut rng))?
        } else {
            self.forward::<ChaCha8Rng>(&mut g, ids, None)?
        };
        TokenReps::new(g.value(reps).clone())
    }

    /// `[1 × 2]` (entail, non-entail) probabilities from the `[CLS]` row.
    pub fn classify_in(&self, g: &mut Graph<'_>, reps: Var) -> Result<Var> {
        let cls = g.slice_rows(reps, 0, 1)?;
        let logits = self.linear(g, cls, self.index.cls_w, self.index.cls_b)?;
        g.softmax(logits, 1)
    }

    /// `[k × 1]` sigmoid scores, one per span, in span order.
    pub fn score_in(&self, g: &mut Graph<'_>, reps: Var, spans: &[Span]) -> Result<Var> {
        let len = g.value(reps).shape()[0];
        if spans.is_empty() {
            return Err(Error::invalid("no option spans to score"));
        }
        validate_spans(spans, len)?;
        let pooled = spans
            .iter()
            .map(|&(s, e)| g.mean_rows(reps, s, e))
            .collect::<Result<Vec<_>>>()?;
        let h = if pooled.len() == 1 {
            pooled[0]
        } else {
            g.concat_rows(&pooled)?
        };
        let ix = &self.index;
        let z = self.linear(g, h, ix.scorer_w1, ix.scorer_b1)?;
        let z = g.gelu(z)?;
        let z = self.linear(g, z, ix.scorer_w2, ix.scorer_b2)?;
        g.sigmoid(z)
    }

    /// Mean-pooled, L2-normalized `[1 × d]` sentence embedding.
    pub fn bi_encode_in<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        ids: &[TokenId],
        dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        let reps = self.forward(g, ids, dropout_rng)?;
        let pooled = g.mean_rows(reps, 0, ids.len())?;
        g.l2_normalize(pooled)
    }

    /// Softmax over the classification head applied to the `[CLS]` row.
    pub fn classify_pair(&self, reps: &TokenReps) -> Result<(f64, f64)> {
        if reps.is_empty() {
            return Err(Error::invalid("empty token representations"));
        }
        let mut g = self.graph(false);
        let r = g.constant(reps.tensor().clone())?;
        let p = self.classify_in(&mut g, r)?;
        let d = g.value(p).data();
        Ok((d[0], d[1]))
    }

    /// Per-span scores `sigmoid(MLP(mean_pool(span)))`.
    pub fn score_options(&self, reps: &TokenReps, spans: &[Span]) -> Result<Vec<f64>> {
        let mut g = self.graph(false);
        let r = g.constant(reps.tensor().clone())?;
        let s = self.score_in(&mut g, r, spans)?;
        Ok(g.value(s).data().to_vec())
    }

    /// Entailment probability of a TE/Context layout in one eval pass.
    pub fn entail_probability(&self, ids: &[TokenId]) -> Result<f64> {
        let mut g = self.graph(false);
        let reps = self.forward::<ChaCha8Rng>(&mut g, ids, None)?;
        let p = self.classify_in(&mut g, reps)?;
        Ok(g.value(p).data()[0])
    }

    /// Scores of all spans of a parallel layout in one eval pass.
    pub fn parallel_scores(&self, ids: &[TokenId], spans: &[Span]) -> Result<Vec<f64>> {
        let mut g = self.graph(false);
        let reps = self.forward::<ChaCha8Rng>(&mut g, ids, None)?;
        let s = self.score_in(&mut g, reps, spans)?;
        Ok(g.value(s).data().to_vec())
    }

    /// Unit-norm sentence embedding of `ids` (eval mode).
    pub fn bi_encode(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty token sequence"));
        }
        let mut g = self.graph(false);
        let v = self.bi_encode_in::<ChaCha8Rng>(&mut g, ids, None)?;
        Ok(g.value(v).data().to_vec())
    }

    /// Returns a model whose parameters are replaced by `params`, which must
    /// match this model's layout.
    pub fn with_params(&self, params: Vec<Tensor>) -> Result<Self> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("parameter layout mismatch"));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests;
