//! Fixtures shared by the criterion benches under `benches/`.

use tesel_core::pairing::{OptionSpace, SelectionInstance};
use tesel_core::{EncoderConfig, EncoderModel, Vocabulary};

/// An `n`-option space (`o{i}a o{i}b`), its vocabulary, and a
/// default-config model over it.
pub fn fixture(n: usize) -> (OptionSpace, Vocabulary, EncoderModel) {
    let options: Vec<String> = (0..n).map(|i| format!("o{i}a o{i}b")).collect();
    let mut corpus = options.clone();
    corpus.push("the report says that it is".to_string());
    let vocab = Vocabulary::build(&corpus, 1).expect("vocabulary");
    let space = OptionSpace::new(options, "[LABEL]").expect("space");
    let model = EncoderModel::new(EncoderConfig::default(), vocab.len()).expect("model");
    (space, vocab, model)
}

/// A premise mentioning option `gold` and half of option `gold + 1`.
pub fn instance(n: usize, gold: usize) -> SelectionInstance {
    let other = (gold + 1) % n;
    SelectionInstance::new(
        format!("b{gold}"),
        format!("the report says that o{gold}a o{gold}b it is o{other}a"),
        vec![gold],
    )
}
