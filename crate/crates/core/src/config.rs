//! Line-oriented `key=value` configuration with `#` comments.
//!
//! A run config names every model and training field; the model subset is
//! also the canonical text embedded in checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::backbone::BackboneConfig;
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const MODEL_KEYS: [&str; 13] = [
    "backbone",
    "patch",
    "bands",
    "widths",
    "downsample",
    "classes",
    "primary_capsules",
    "hidden_capsules",
    "capsule_size",
    "routing",
    "window",
    "iterations",
    "seed",
];

pub const TRAIN_KEYS: [&str; 6] = [
    "max_epochs",
    "initial_lr",
    "early_stop_patience",
    "lr_halve_patience",
    "batch_size",
    "optimizer",
];

pub const DATA_KEYS: [&str; 3] = ["data", "train_fraction", "val_fraction"];

/// Parsed `key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    /// Fails naming every missing and every unrecognised key.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        let missing: Vec<&str> = allowed.iter().copied().filter(|k| !self.entries.contains_key(*k)).collect();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k))
            .collect();
        let mut problems = Vec::new();
        if !missing.is_empty() {
            problems.push(format!("missing keys: {}", missing.join(", ")));
        }
        if !unknown.is_empty() {
            problems.push(format!("unknown keys: {}", unknown.join(", ")));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing keys: {key}")))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key}: cannot parse {v:?}")))
    }

    /// Comma-separated integers; an empty value is an empty list.
    pub fn list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("key {key}: cannot parse {v:?} as a list of integers")))
            })
            .collect()
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn model_config_text(cfg: &ModelConfig) -> String {
    format!(
        "backbone={}\npatch={}\nbands={}\nwidths={}\ndownsample={}\nclasses={}\nprimary_capsules={}\nhidden_capsules={}\ncapsule_size={}\nrouting={}\nwindow={}\niterations={}\nseed={}\n",
        cfg.backbone.variant,
        cfg.backbone.patch,
        cfg.backbone.bands,
        join(&cfg.backbone.widths),
        join(&cfg.backbone.downsample),
        cfg.classes,
        cfg.primary_capsules,
        join(&cfg.hidden_capsules),
        cfg.capsule_size,
        cfg.routing,
        cfg.window,
        cfg.iterations,
        cfg.seed
    )
}

fn model_from(kv: &KeyValues) -> Result<ModelConfig> {
    Ok(ModelConfig {
        backbone: BackboneConfig {
            variant: kv.get("backbone")?,
            patch: kv.get("patch")?,
            bands: kv.get("bands")?,
            widths: kv.list("widths")?,
            downsample: kv.list("downsample")?,
        },
        classes: kv.get("classes")?,
        primary_capsules: kv.get("primary_capsules")?,
        hidden_capsules: kv.list("hidden_capsules")?,
        capsule_size: kv.get("capsule_size")?,
        routing: kv.get("routing")?,
        window: kv.get("window")?,
        iterations: kv.get("iterations")?,
        seed: kv.get("seed")?,
    })
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let kv = KeyValues::parse(text)?;
    kv.expect_keys(&MODEL_KEYS)?;
    model_from(&kv)
}

/// Everything `train`, `eval` and `profile` read from one file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Cube header path, resolved against the config file's directory.
    pub data: PathBuf,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn all_keys() -> Vec<&'static str> {
        DATA_KEYS.iter().chain(&MODEL_KEYS).chain(&TRAIN_KEYS).copied().collect()
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.expect_keys(&Self::all_keys())?;
        let model = model_from(&kv)?;
        let train = TrainConfig {
            max_epochs: kv.get("max_epochs")?,
            initial_lr: kv.get("initial_lr")?,
            early_stop_patience: kv.get("early_stop_patience")?,
            lr_halve_patience: kv.get("lr_halve_patience")?,
            batch_size: kv.get("batch_size")?,
            seed: model.seed,
            optimizer: kv.get("optimizer")?,
        };
        let data = PathBuf::from(kv.raw("data")?);
        Ok(RunConfig {
            data: if data.is_absolute() { data } else { base.join(data) },
            train_fraction: kv.get("train_fraction")?,
            val_fraction: kv.get("val_fraction")?,
            model,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// One seed drives initialisation, the fixed permutations, the split and batching.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            seed: self.model.seed,
        }
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        format!(
            "data={}\ntrain_fraction={}\nval_fraction={}\n{}max_epochs={}\ninitial_lr={}\nearly_stop_patience={}\nlr_halve_patience={}\nbatch_size={}\noptimizer={}\n",
            self.data.display(),
            self.train_fraction,
            self.val_fraction,
            model_config_text(&self.model),
            t.max_epochs,
            t.initial_lr,
            t.early_stop_patience,
            t.lr_halve_patience,
            t.batch_size,
            t.optimizer
        )
    }
}
