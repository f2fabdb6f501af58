//! Input construction for the three paradigms.
//!
//! Every layout starts with `[CLS]`, puts one `[SEP]` after the premise and
//! one after every hypothesis:
//!
//! ```text
//! pair      [CLS] P [SEP] H [SEP]
//! context   [CLS] P [SEP] H [SEP] c1 [SEP] ... ck [SEP]
//! parallel  [CLS] P [SEP] H1 [SEP] ... Hk [SEP]
//! ```
//!
//! When a layout exceeds the encoder's `max_len` the premise is cut from its
//! end; hypotheses are never truncated.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Span;
use crate::error::{Error, Result};
use crate::text::{TokenId, Vocabulary, CLS, SEP};

pub const LABEL_SLOT: &str = "[LABEL]";
pub const ENTITY_SLOT: &str = "[ENTITY]";

/// Ordered, duplicate-free option labels plus the verbalization template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSpace {
    options: Vec<String>,
    template: String,
}

impl OptionSpace {
    pub fn new(options: Vec<String>, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if template.matches(LABEL_SLOT).count() != 1 {
            return Err(Error::invalid(format!(
                "template {template:?} must contain exactly one {LABEL_SLOT}"
            )));
        }
        if options.is_empty() {
            return Err(Error::invalid("option space is empty"));
        }
        let mut seen = BTreeSet::new();
        for o in &options {
            if o.trim().is_empty() {
                return Err(Error::invalid("empty option label"));
            }
            if !seen.insert(o.as_str()) {
                return Err(Error::invalid(format!("duplicate option {o:?}")));
            }
        }
        Ok(Self { options, template })
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn needs_entity(&self) -> bool {
        self.template.contains(ENTITY_SLOT)
    }

    /// Hypothesis text of option `index`.
    pub fn verbalize(&self, index: usize, entity: Option<&str>) -> Result<String> {
        let label = self
            .options
            .get(index)
            .ok_or_else(|| Error::invalid(format!("option {index} out of range {}", self.len())))?;
        let mut text = self.template.replace(LABEL_SLOT, label);
        if self.needs_entity() {
            let entity = entity.ok_or_else(|| {
                Error::invalid(format!("template {:?} needs an entity", self.template))
            })?;
            text = text.replace(ENTITY_SLOT, entity);
        }
        Ok(text)
    }
}

/// One task example. `gold` is kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionInstance {
    pub id: String,
    pub premise: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub gold: Vec<usize>,
    #[serde(default)]
    pub space_ref: String,
}

impl SelectionInstance {
    pub fn new(id: impl Into<String>, premise: impl Into<String>, gold: Vec<usize>) -> Self {
        let mut gold = gold;
        gold.sort_unstable();
        gold.dedup();
        Self {
            id: id.into(),
            premise: premise.into(),
            entity: None,
            gold,
            space_ref: String::new(),
        }
    }

    pub fn is_gold(&self, option: usize) -> bool {
        self.gold.binary_search(&option).is_ok()
    }

    /// Checks gold indices against a space of `n` options.
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.gold.iter().find(|&&g| g >= n) {
            return Err(Error::data(format!(
                "instance {}: gold option {bad} outside space of {n}",
                self.id
            )));
        }
        if self.gold.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data(format!("instance {}: gold not a sorted set", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    Pair,
    Context,
    Parallel,
}

/// A token sequence encoding (P, H1..Hk) plus span bookkeeping.
///
/// For pair and context layouts `labels` holds the single label of the first
/// hypothesis; the remaining spans of a context layout are competing context.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutedInput {
    pub kind: LayoutKind,
    pub ids: Vec<TokenId>,
    pub premise_span: Span,
    pub option_spans: Vec<Span>,
    pub option_indices: Vec<usize>,
    pub labels: Vec<bool>,
}

impl LayoutedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Label of a pair or context layout.
    pub fn label(&self) -> bool {
        self.labels[0]
    }
}

/// Builds layouts for one option space under a token budget.
#[derive(Debug, Clone, Copy)]
pub struct LayoutBuilder<'a> {
    pub vocab: &'a Vocabulary,
    pub space: &'a OptionSpace,
    pub max_len: usize,
}

impl<'a> LayoutBuilder<'a> {
    pub fn new(vocab: &'a Vocabulary, space: &'a OptionSpace, max_len: usize) -> Self {
        Self {
            vocab,
            space,
            max_len,
        }
    }

    fn hypothesis_ids(&self, instance: &SelectionInstance, option: usize) -> Result<Vec<TokenId>> {
        let text = self.space.verbalize(option, instance.entity.as_deref())?;
        let ids = self.vocab.encode(&text);
        if ids.is_empty() {
            return Err(Error::invalid(format!("option {option} verbalizes to no tokens")));
        }
        Ok(ids)
    }

    fn assemble(
        &self,
        kind: LayoutKind,
        instance: &SelectionInstance,
        options: &[usize],
        labels: Vec<bool>,
    ) -> Result<LayoutedInput> {
        let hyps = options
            .iter()
            .map(|&o| self.hypothesis_ids(instance, o))
            .collect::<Result<Vec<_>>>()?;
        let mut premise = self.vocab.encode(&instance.premise);
        let fixed = 2 + hyps.iter().map(|h| h.len() + 1).sum::<usize>();
        if fixed + premise.len() > self.max_len {
            if fixed >= self.max_len {
                return Err(Error::TooLong {
                    len: fixed + 1,
                    max_len: self.max_len,
                });
            }
            premise.truncate(self.max_len - fixed);
        }
        if premise.is_empty() {
            return Err(Error::invalid(format!("instance {} has an empty premise", instance.id)));
        }

        let mut ids = Vec::with_capacity(fixed + premise.len());
        ids.push(CLS);
        ids.extend_from_slice(&premise);
        let premise_span = (1, ids.len());
        ids.push(SEP);
        let mut option_spans = Vec::with_capacity(hyps.len());
        for h in &hyps {
            let start = ids.len();
            ids.extend_from_slice(h);
            option_spans.push((start, ids.len()));
            ids.push(SEP);
        }
        Ok(LayoutedInput {
            kind,
            ids,
            premise_span,
            option_spans,
            option_indices: options.to_vec(),
            labels,
        })
    }

    fn check_option(&self, option: usize) -> Result<()> {
        if option >= self.space.len() {
            return Err(Error::invalid(format!(
                "option {option} out of range {}",
                self.space.len()
            )));
        }
        Ok(())
    }

    /// `[CLS] P [SEP] H [SEP]`, labelled by whether the option is gold.
    pub fn make_te_pair(&self, instance: &SelectionInstance, option: usize) -> Result<LayoutedInput> {
        self.check_option(option)?;
        let label = instance.is_gold(option);
        self.assemble(LayoutKind::Pair, instance, &[option], vec![label])
    }

    /// Pair layout followed by `k` competing options drawn uniformly without
    /// replacement from `pool`, in random order. The label is that of the
    /// plain pair.
    pub fn make_context_pair<R: Rng + ?Sized>(
        &self,
        instance: &SelectionInstance,
        option: usize,
        pool: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Result<LayoutedInput> {
        self.check_option(option)?;
        if pool.contains(&option) {
            return Err(Error::invalid(format!(
                "context pool contains the hypothesis option {option}"
            )));
        }
        if pool.len() < k {
            return Err(Error::invalid(format!(
                "context pool of {} options cannot supply {k}",
                pool.len()
            )));
        }
        if k == 0 {
            return self.make_te_pair(instance, option);
        }
        let mut context: Vec<usize> = index::sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        context.shuffle(rng);
        let mut options = Vec::with_capacity(k + 1);
        options.push(option);
        options.extend(context);
        let label = instance.is_gold(option);
        self.assemble(LayoutKind::Context, instance, &options, vec![label])
    }

    /// `[CLS] P [SEP] H1 [SEP] ... Hk [SEP]` with `labels[i]` the gold status
    /// of `options[i]`. Options are laid out in the given order.
    pub fn make_parallel_pair(
        &self,
        instance: &SelectionInstance,
        options: &[usize],
    ) -> Result<LayoutedInput> {
        if options.is_empty() {
            return Err(Error::invalid("parallel layout needs at least one option"));
        }
        let mut seen = BTreeSet::new();
        for &o in options {
            self.check_option(o)?;
            if !seen.insert(o) {
                return Err(Error::invalid(format!("duplicate option {o} in layout")));
            }
        }
        let labels = options.iter().map(|&o| instance.is_gold(o)).collect();
        self.assemble(LayoutKind::Parallel, instance, options, labels)
    }

    /// `k` parallel layouts over permutations of `options` in which the
    /// single gold option sits at `k` distinct positions.
    pub fn shuffle_augment<R: Rng + ?Sized>(
        &self,
        instance: &SelectionInstance,
        options: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<LayoutedInput>> {
        let gold: Vec<usize> = options.iter().copied().filter(|&o| instance.is_gold(o)).collect();
        if gold.len() != 1 {
            return Err(Error::invalid(format!(
                "shuffle augmentation needs exactly one gold option, found {}",
                gold.len()
            )));
        }
        if k == 0 || k > options.len() {
            return Err(Error::invalid(format!(
                "cannot place the gold option at {k} distinct positions among {}",
                options.len()
            )));
        }
        let gold = gold[0];
        let mut rest: Vec<usize> = options.iter().copied().filter(|&o| o != gold).collect();
        let mut positions = index::sample(rng, options.len(), k).into_vec();
        positions.shuffle(rng);
        positions
            .into_iter()
            .map(|pos| {
                rest.shuffle(rng);
                let mut order = rest.clone();
                order.insert(pos, gold);
                self.make_parallel_pair(instance, &order)
            })
            .collect()
    }
}

/// Consecutive chunks of at most `k` options, in input order; the last chunk
/// holds the remainder and is never padded.
pub fn chunk_options(options: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::invalid("chunk size must be at least 1"));
    }
    if options.is_empty() {
        return Err(Error::invalid("no options to chunk"));
    }
    Ok(options.chunks(k).map(<[usize]>::to_vec).collect())
}
