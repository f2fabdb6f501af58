//! Learning-to-select over a small transformer encoder.
//!
//! Options of a selection task are verbalized as hypotheses and scored
//! against the input text (the premise) in one of three ways:
//!
//! * pairwise entailment: one `[CLS] P [SEP] H [SEP]` pass per option;
//! * contextualized entailment: trained with competing options appended
//!   after the hypothesis, inferred pairwise;
//! * parallel entailment: `k` hypotheses in one sequence, each scored by a
//!   sigmoid head over its mean-pooled span, so inference needs
//!   `ceil(n / k)` passes instead of `n`.
//!
//! A bi-encoder retriever shrinks large option spaces to top-k candidates
//! first.

pub mod encoder;
pub mod error;
pub mod inference;
pub mod numerics;
pub mod pairing;
pub mod retrieval;
pub mod text;
pub mod training;
pub mod workbench;

pub use encoder::{EncoderConfig, EncoderModel, TokenReps};
pub use error::{Error, Result};
pub use inference::{CostLedger, ScoredOption};
pub use numerics::{Graph, Tensor, Var};
pub use pairing::{LayoutedInput, OptionSpace, SelectionInstance};
pub use retrieval::{EmbeddingIndex, Retriever};
pub use text::Vocabulary;
pub use training::{Mode, TrainConfig, TrainReport};
