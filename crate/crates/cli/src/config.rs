//! Effective configuration: defaults, then the TOML file, then flags.

use std::path::Path;

use gkedm::distill::{DistillConfig, Relation};
use gkedm::graph::SbmConfig;
use gkedm::pipeline::TrainConfig;
use gkedm::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::TrainFlags;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: String,
    pub n_heads: usize,
    pub m: usize,
    pub student_arch: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: "gcn:64,64".into(),
            n_heads: 4,
            m: 8,
            student_arch: "gcn:16".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.01, 0.1, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: SbmConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub sweep: SweepConfig,
}

impl Config {
    /// Defaults overlaid with `path`, key by key, so a file only has to name
    /// what it changes.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = gkedm::io::read_to_string(path)?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| Error::Contract(e.to_string()))?;
        overlay(&mut merged, file);
        serde_path_to_error::deserialize(toml::Value::Table(merged))
            .map_err(|e| Error::Config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))
    }

    pub fn apply_train(&mut self, f: &TrainFlags) {
        let t = &mut self.train;
        set(&mut t.epochs, f.epochs);
        set(&mut t.learning_rate, f.learning_rate);
        set(&mut t.patience, f.patience);
        set(&mut t.weight_decay, f.weight_decay);
        set(&mut t.backbone_lr_scale, f.backbone_lr_scale);
        set(&mut t.seed, f.seed);
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad {what} {x:?}"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("empty {what} list")));
    }
    Ok(items)
}

pub fn parse_relations(s: &str) -> Result<Vec<Relation>> {
    let mut rels: Vec<Relation> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    rels.sort();
    rels.dedup();
    Ok(rels)
}
