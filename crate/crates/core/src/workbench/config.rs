//! Run configuration: one TOML file covering data and output paths, the
//! encoder, training, retrieval and inference, with `key.path=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::retrieval::RetrieverConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    /// Candidates kept per instance; unset scores the full space.
    pub top_k: Option<usize>,
    pub trainer: RetrieverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    /// Options per parallel inference pass; defaults to `train.k`.
    pub chunk_k: Option<usize>,
    /// Fixed multi-label threshold; unset calibrates on dev.
    pub tau: Option<f64>,
    pub vote_rounds: usize,
    pub seed: u64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            chunk_k: None,
            tau: None,
            vote_rounds: 1,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Stop training once the dev metric reaches this value.
    pub early_stop: Option<f64>,
    pub min_count: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalSection,
    pub inference: InferenceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            early_stop: None,
            min_count: 1,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalSection::default(),
            inference: InferenceSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.retrieval.trainer.encoder.validate()?;
        if self.retrieval.top_k == Some(0) || self.inference.chunk_k == Some(0) {
            return Err(Error::Config("top_k and chunk_k must be at least 1".into()));
        }
        if let Some(t) = self.inference.tau {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("tau {t} outside (0, 1)")));
            }
        }
        if self.inference.vote_rounds == 0 {
            return Err(Error::Config("vote_rounds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn chunk_k(&self) -> usize {
        self.inference.chunk_k.unwrap_or(self.train.k.max(1))
    }

    /// Parses TOML text, applies `key.path=value` overrides, validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file, or starts from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }
}

/// Sets a dotted key; the value is parsed as a TOML value and falls back to
/// a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Mode;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, &[]).unwrap(), c);
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("bogus = 1", &[]), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[train]\nlr = 0.1", &[]).is_err());
        assert!(RunConfig::from_toml("", &["encoder.nope=3".into()]).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "data_dir = \"d\"\n[train]\nmode = \"te\"\nepochs = 3\n";
        let c = RunConfig::from_toml(
            text,
            &[
                "train.mode=parallel".into(),
                "train.epochs=5".into(),
                "retrieval.top_k=32".into(),
                "out_dir=/tmp/x".into(),
                "inference.tau=0.4".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.mode, Mode::Parallel);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.retrieval.top_k, Some(32));
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.inference.tau, Some(0.4));
        assert!(RunConfig::from_toml("", &["inference.tau=1.5".into()]).is_err());
        assert!(RunConfig::from_toml("", &["novalue".into()]).is_err());
    }
}
