//! Dataset directories: a TOML manifest, an options file (one label per
//! line) and JSON-lines splits of `{id, text, entity?, gold}` records.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::Profile;
use crate::error::{Error, Result};
use crate::inference::TaskKind;
use crate::pairing::{OptionSpace, SelectionInstance};

pub const MANIFEST_FILE: &str = "dataset.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub task: TaskKind,
    pub template: String,
    #[serde(default = "default_options")]
    pub options: String,
    #[serde(default = "default_train")]
    pub train: String,
    #[serde(default = "default_dev")]
    pub dev: String,
    #[serde(default = "default_test")]
    pub test: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_options() -> String {
    "options.txt".into()
}
fn default_train() -> String {
    "train.jsonl".into()
}
fn default_dev() -> String {
    "dev.jsonl".into()
}
fn default_test() -> String {
    "test.jsonl".into()
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            name: "dataset".into(),
            task: TaskKind::Single,
            template: "[LABEL]".into(),
            options: default_options(),
            train: default_train(),
            dev: default_dev(),
            test: default_test(),
            profile: None,
            seed: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entity: Option<String>,
    gold: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub space: OptionSpace,
    pub train: Vec<SelectionInstance>,
    pub dev: Vec<SelectionInstance>,
    pub test: Vec<SelectionInstance>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &SelectionInstance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Gold indices in range, ids unique, nonempty gold, one gold for
    /// single-label tasks.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for inst in self.all() {
            inst.validate(self.space.len())?;
            if inst.gold.is_empty() {
                return Err(Error::data(format!("instance {} has no gold option", inst.id)));
            }
            if self.manifest.task == TaskKind::Single && inst.gold.len() != 1 {
                return Err(Error::data(format!(
                    "instance {} has {} gold options in a single-label task",
                    inst.id,
                    inst.gold.len()
                )));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::data(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = toml::to_string(&self.manifest)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        let mut opts = String::new();
        for o in self.space.options() {
            opts.push_str(o);
            opts.push('\n');
        }
        fs::write(dir.join(&self.manifest.options), opts)?;
        for (file, split) in [
            (&self.manifest.train, &self.train),
            (&self.manifest.dev, &self.dev),
            (&self.manifest.test, &self.test),
        ] {
            let mut w = BufWriter::new(fs::File::create(dir.join(file))?);
            write_jsonl(&mut w, split)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: DatasetManifest = toml::from_str(&read_artifact(&manifest_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
        let options: Vec<String> = read_artifact(&dir.join(&manifest.options))?
            .lines()
            .map(str::to_string)
            .filter(|l| !l.is_empty())
            .collect();
        let space = OptionSpace::new(options, manifest.template.clone())
            .map_err(|e| Error::Data(e.to_string()))?;
        let load_split = |file: &str| -> Result<Vec<SelectionInstance>> {
            let path = dir.join(file);
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            let mut split = read_jsonl(BufReader::new(fs::File::open(&path)?))?;
            for inst in &mut split {
                inst.space_ref = manifest.name.clone();
            }
            Ok(split)
        };
        let ds = Dataset {
            train: load_split(&manifest.train)?,
            dev: load_split(&manifest.dev)?,
            test: load_split(&manifest.test)?,
            manifest,
            space,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub(crate) fn read_artifact(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

pub fn write_jsonl(mut w: impl Write, split: &[SelectionInstance]) -> Result<()> {
    for inst in split {
        let rec = Record {
            id: inst.id.clone(),
            text: inst.premise.clone(),
            entity: inst.entity.clone(),
            gold: inst.gold.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<SelectionInstance>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        let mut inst = SelectionInstance::new(rec.id, rec.text, rec.gold.clone());
        if inst.gold.len() != rec.gold.len() {
            return Err(Error::Data(format!("line {}: duplicate gold indices", n + 1)));
        }
        inst.entity = rec.entity;
        out.push(inst);
    }
    Ok(out)
}
