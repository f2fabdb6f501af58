//! Synthetic selection tasks with a checkable labelling rule.
//!
//! Every option is two tokens unique to it. A premise contains all tokens
//! of its gold options, single tokens of some non-gold options (partial
//! distractors) and filler words, shuffled. An option is gold exactly when
//! all of its tokens occur in the premise, so [`oracle_gold`] recovers the
//! labels from text alone.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::inference::TaskKind;
use crate::pairing::{OptionSpace, SelectionInstance};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Medium single-label space, short premises.
    SingleSmall,
    /// Large multi-label space (1-4 gold options).
    MultiLarge,
    /// Long premises over a four-option space.
    Longdoc,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::SingleSmall => "single_small",
            Profile::MultiLarge => "multi_large",
            Profile::Longdoc => "longdoc",
        }
    }

    pub fn task(self) -> TaskKind {
        match self {
            Profile::MultiLarge => TaskKind::Multi,
            _ => TaskKind::Single,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_small" => Ok(Profile::SingleSmall),
            "multi_large" => Ok(Profile::MultiLarge),
            "longdoc" => Ok(Profile::Longdoc),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub profile: Profile,
    pub n_options: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Profile defaults.
    pub fn new(profile: Profile, seed: u64) -> Self {
        let (n_options, n_train, n_dev, n_test) = match profile {
            Profile::SingleSmall => (40, 2000, 500, 500),
            Profile::MultiLarge => (1000, 2000, 300, 300),
            Profile::Longdoc => (4, 400, 100, 100),
        };
        Self {
            profile,
            n_options,
            n_train,
            n_dev,
            n_test,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_options == 0 || self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return Err(Error::invalid("synthetic sizes must be positive"));
        }
        let min_options = match self.profile {
            Profile::MultiLarge => 8,
            _ => 2,
        };
        if self.n_options < min_options {
            return Err(Error::invalid(format!(
                "{} needs at least {min_options} options",
                self.profile.name()
            )));
        }
        if self.profile == Profile::MultiLarge && self.n_options < 1000 {
            return Err(Error::invalid("multi_large needs at least 1000 options"));
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const FILLER_WORDS: usize = 200;

fn pseudo_word<R: Rng>(rng: &mut R, syllables: usize) -> String {
    let mut w = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

/// `n` distinct words not in `taken`, which is extended with them. Draws
/// that collide with an existing word are regenerated.
fn fresh_words<R: Rng>(rng: &mut R, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Options whose tokens all occur in `text`, ascending.
pub fn oracle_gold(space: &OptionSpace, text: &str) -> Vec<usize> {
    let words: BTreeSet<String> = normalize(text).into_iter().collect();
    (0..space.len())
        .filter(|&i| normalize(&space.options()[i]).iter().all(|t| words.contains(t)))
        .collect()
}

struct Generator {
    profile: Profile,
    option_tokens: Vec<[String; 2]>,
    filler: Vec<String>,
}

impl Generator {
    fn instance<R: Rng>(&self, rng: &mut R, id: String) -> SelectionInstance {
        let n = self.option_tokens.len();
        let n_gold = match self.profile {
            Profile::MultiLarge => rng.random_range(1..=4),
            _ => 1,
        };
        let mut gold: Vec<usize> = index::sample(rng, n, n_gold).into_vec();
        gold.sort_unstable();
        let non_gold: Vec<usize> = (0..n).filter(|o| !gold.contains(o)).collect();
        let (n_partial, n_filler) = match self.profile {
            Profile::SingleSmall => (usize::from(rng.random_bool(0.5)), rng.random_range(4..=8)),
            Profile::MultiLarge => (rng.random_range(0..=2), rng.random_range(3..=8)),
            Profile::Longdoc => (non_gold.len(), 0),
        };
        let mut words: Vec<String> = Vec::new();
        for &g in &gold {
            words.extend(self.option_tokens[g].iter().cloned());
        }
        for i in index::sample(rng, non_gold.len(), n_partial.min(non_gold.len())) {
            words.push(self.option_tokens[non_gold[i]][rng.random_range(0..2)].clone());
        }
        let target = match self.profile {
            Profile::Longdoc => rng.random_range(100..=200),
            _ => words.len() + n_filler,
        };
        while words.len() < target {
            words.push(self.filler[rng.random_range(0..self.filler.len())].clone());
        }
        words.shuffle(rng);
        SelectionInstance::new(id, words.join(" "), gold)
    }
}

/// Generates a dataset; identical specs give identical datasets.
pub fn synth(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = BTreeSet::new();
    let words = fresh_words(&mut rng, 2 * spec.n_options, &mut taken);
    let option_tokens: Vec<[String; 2]> = words
        .chunks(2)
        .map(|c| [c[0].clone(), c[1].clone()])
        .collect();
    let filler = fresh_words(&mut rng, FILLER_WORDS, &mut taken);
    let options: Vec<String> = option_tokens.iter().map(|t| t.join(" ")).collect();
    let name = spec.profile.name();
    let space = OptionSpace::new(options, "[LABEL]")?;
    let gen = Generator {
        profile: spec.profile,
        option_tokens,
        filler,
    };
    let mut split = |prefix: &str, n: usize| -> Vec<SelectionInstance> {
        (0..n)
            .map(|i| {
                let mut inst = gen.instance(&mut rng, format!("{prefix}-{i:05}"));
                inst.space_ref = name.to_string();
                inst
            })
            .collect()
    };
    let train = split("train", spec.n_train);
    let dev = split("dev", spec.n_dev);
    let test = split("test", spec.n_test);
    let manifest = DatasetManifest {
        name: name.to_string(),
        task: spec.profile.task(),
        template: space.template().to_string(),
        profile: Some(spec.profile),
        seed: Some(spec.seed),
        ..DatasetManifest::default()
    };
    let ds = Dataset {
        manifest,
        space,
        train,
        dev,
        test,
    };
    ds.validate()?;
    Ok(ds)
}
