//! Run configuration: a key=value text file plus command-line overrides.
//! Every key has a documented default; unknown keys are rejected.

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: {msg}")]
    BadValue { key: String, msg: String },
}

/// All run settings. Field comments state the config key and default.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // paths
    /// facts: facts TSV (default data/facts.tsv)
    pub facts: PathBuf,
    /// train: training questions JSONL (default data/train.jsonl)
    pub train: PathBuf,
    /// dev: development questions JSONL (default data/dev.jsonl)
    pub dev: PathBuf,
    /// test: test questions JSONL (default data/test.jsonl)
    pub test: PathBuf,
    /// checkpoint: checkpoint directory (default checkpoint)
    pub checkpoint: PathBuf,
    // model dimensions
    /// dim: complex dimension D of the KG tables (default 8)
    pub dim: usize,
    /// d_model: hidden width (default 32; must be even)
    pub d_model: usize,
    /// layers: reasoner depth L (default 2)
    pub layers: usize,
    /// max_hop: diffusion horizon (default 2)
    pub max_hop: usize,
    /// hops: subgraph extraction radius (default 2)
    pub hops: usize,
    /// max_nodes: subgraph node cap (default 32)
    pub max_nodes: usize,
    /// max_facts: SPO retrieval budget (default 24)
    pub max_facts: usize,
    // objectives
    /// lambda: ordering-loss coefficient (default 0.3)
    pub lambda: f64,
    /// mu: continued-embedding-objective weight; 0 freezes KG tables (default 0.1)
    pub mu: f64,
    /// fin_batch: facts sampled for L_fin per question (default 2)
    pub fin_batch: usize,
    // optimization
    /// lr: SGD step size (default 0.5)
    pub lr: f64,
    /// clip: global gradient-norm cap per batch; 0 disables (default 5)
    pub clip: f64,
    /// epochs: end-to-end training epochs (default 50)
    pub epochs: usize,
    /// batch: questions per SGD step (default 8)
    pub batch: usize,
    /// pretrain_epochs: embedding pretraining epochs before end-to-end (default 80)
    pub pretrain_epochs: usize,
    /// pretrain_lr: pretraining step size (default 1.0)
    pub pretrain_lr: f64,
    /// pretrain_batch: facts per pretraining step (default 16)
    pub pretrain_batch: usize,
    // ablation flags
    /// time_aware: positional codes + ordering loss (default true)
    pub time_aware: bool,
    /// adaptive_fusion: Eqs. 12-14 head instead of concat+linear (default true)
    pub adaptive_fusion: bool,
    /// multi_hop: diffusion horizon from max_hop instead of 0 (default true)
    pub multi_hop: bool,
    /// constraint_aware: Eqs. 5-6 fusion into Q_new (default true)
    pub constraint_aware: bool,
    /// type_mask: restrict candidates by annotated answer type (default false)
    pub type_mask: bool,
    // synthetic generation (used by `generate`)
    /// entities: synthetic entity count (default 200)
    pub entities: usize,
    /// relations: synthetic relation count (default 4)
    pub relations: usize,
    /// timestamps: synthetic timestamp count (default 40)
    pub timestamps: usize,
    /// facts_per_entity: timeline segments per (target, relation) (default 5)
    pub facts_per_entity: usize,
    /// questions_per_template: questions per template (default 80)
    pub questions_per_template: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            facts: "data/facts.tsv".into(),
            train: "data/train.jsonl".into(),
            dev: "data/dev.jsonl".into(),
            test: "data/test.jsonl".into(),
            checkpoint: "checkpoint".into(),
            dim: 8,
            d_model: 32,
            layers: 2,
            max_hop: 2,
            hops: 2,
            max_nodes: 32,
            max_facts: 24,
            lambda: 0.3,
            mu: 0.1,
            fin_batch: 2,
            lr: 0.5,
            clip: 5.0,
            epochs: 50,
            batch: 8,
            pretrain_epochs: 80,
            pretrain_lr: 1.0,
            pretrain_batch: 16,
            time_aware: true,
            adaptive_fusion: true,
            multi_hop: true,
            constraint_aware: true,
            type_mask: false,
            entities: 200,
            relations: 4,
            timestamps: 40,
            facts_per_entity: 5,
            questions_per_template: 80,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                msg: format!("cannot parse {v:?}"),
            })
        }
        fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    msg: format!("expected true/false, got {v:?}"),
                }),
            }
        }
        match key {
            "facts" => self.facts = value.into(),
            "train" => self.train = value.into(),
            "dev" => self.dev = value.into(),
            "test" => self.test = value.into(),
            "checkpoint" => self.checkpoint = value.into(),
            "dim" => self.dim = num(key, value)?,
            "d_model" => {
                self.d_model = num(key, value)?;
                if self.d_model % 2 != 0 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        msg: "d_model must be even".into(),
                    });
                }
            }
            "layers" => self.layers = num(key, value)?,
            "max_hop" => self.max_hop = num(key, value)?,
            "hops" => self.hops = num(key, value)?,
            "max_nodes" => self.max_nodes = num(key, value)?,
            "max_facts" => self.max_facts = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "fin_batch" => self.fin_batch = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = num(key, value)?,
            "pretrain_lr" => self.pretrain_lr = num(key, value)?,
            "pretrain_batch" => self.pretrain_batch = num(key, value)?,
            "time_aware" => self.time_aware = boolean(key, value)?,
            "adaptive_fusion" => self.adaptive_fusion = boolean(key, value)?,
            "multi_hop" => self.multi_hop = boolean(key, value)?,
            "constraint_aware" => self.constraint_aware = boolean(key, value)?,
            "type_mask" => self.type_mask = boolean(key, value)?,
            "entities" => self.entities = num(key, value)?,
            "relations" => self.relations = num(key, value)?,
            "timestamps" => self.timestamps = num(key, value)?,
            "facts_per_entity" => self.facts_per_entity = num(key, value)?,
            "questions_per_template" => self.questions_per_template = num(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> crate::model::ModelConfig {
        crate::model::ModelConfig {
            dim: self.dim,
            d_model: self.d_model,
            layers: self.layers,
            max_hop: self.max_hop,
            max_facts: self.max_facts,
            hops: self.hops,
            max_nodes: self.max_nodes,
            mu: self.mu,
            lambda: self.lambda,
            type_mask: self.type_mask,
            time_aware: self.time_aware,
            constraint_aware: self.constraint_aware,
            multi_hop: self.multi_hop,
            adaptive_fusion: self.adaptive_fusion,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nd_model=24\nlr=0.05\nmulti_hop=false\n").unwrap();
        let mut cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.d_model, 24);
        assert_eq!(cfg.lr, 0.05);
        assert!(!cfg.multi_hop);
        assert_eq!(cfg.epochs, 50); // untouched default
        cfg.set("epochs", "3").unwrap();
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn unknown_key_and_bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.set("nope", "1"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(cfg.set("lr", "fast").is_err());
        assert!(cfg.set("multi_hop", "maybe").is_err());
        assert!(cfg.set("d_model", "7").is_err());
    }
}
