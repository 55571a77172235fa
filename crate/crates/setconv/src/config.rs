//! Run configuration.
//!
//! A run is described by one TOML document. Every key has a default, so a
//! file only needs the keys it changes:
//!
//! ```toml
//! task = "cic"            # cic | sc_sf | sc_lf | anomaly
//! preset = "cifar-cst"
//! divisor = 4
//! dataset = "runs/data"
//! out = "runs/cifar-cst"
//! no_ct = false
//! fixed_set_size = 3
//!
//! [seeds]
//! init = 0
//! plan = 0
//! dropout = 0
//! eval = 0
//!
//! [ct]
//! n_min = 2
//! n_max = 5
//! batch_sets = 8
//!
//! [optim]
//! peak_lr = 5e-4
//!
//! [train]
//! max_epochs = 100
//! patience = 10
//!
//! [corpus]
//! kind = "classification"
//! n_max = 5
//! [corpus.spec]
//! per_class = 100
//! ```
//!
//! Overrides of the form `section.key=value` are applied on top of the file.
//! The value is parsed as a TOML value and falls back to a bare string.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setconv_core::data::{AttrSpec, ClassificationSpec};
use setconv_core::model::{preset, HeadMode, ModelSpec, PresetOptions};
use setconv_core::train::{AdamConfig, CtConfig, Seeds, SetSchedule, TrainConfig};
use toml::{Table, Value};

use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cic,
    ScSf,
    ScLf,
    Anomaly,
}

impl Task {
    pub fn head_mode(self) -> HeadMode {
        match self {
            Task::Cic => HeadMode::Cic,
            Task::ScSf => HeadMode::ScScoreFusion,
            Task::ScLf => HeadMode::ScLateFusion,
            Task::Anomaly => HeadMode::Anomaly,
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            Task::Cic => "cifar-cst",
            Task::ScSf => "cifar-cst-sf",
            Task::ScLf => "cifar-cst-lf",
            Task::Anomaly => "desk-anomaly-cst",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub init: u64,
    pub plan: u64,
    pub dropout: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub val_sizes: Vec<usize>,
    pub val_trials: usize,
    pub episodes_per_epoch: usize,
    pub episode_size: usize,
    pub max_prevalence: f64,
    pub val_episodes: usize,
    pub val_prevalence: f64,
    /// Wall-clock limit; training stops as aborted once it is exceeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub preset: String,
    pub divisor: usize,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Train on fixed sets of `fixed_set_size` instead of a fresh
    /// combinatorial plan per epoch.
    pub no_ct: bool,
    pub fixed_set_size: usize,
    pub seeds: RunSeeds,
    pub ct: CtConfig,
    pub optim: AdamConfig,
    pub train: TrainSection,
    pub corpus: CorpusSpec,
}

impl RunConfig {
    /// Defaults for `task`, with output paths under `root`.
    pub fn defaults(task: Task, root: &Path) -> Self {
        let t = TrainConfig::default();
        let corpus = match task {
            Task::Anomaly => CorpusSpec::Attributes {
                spec: AttrSpec::default(),
                val_count: 200,
                test_count: 400,
            },
            _ => CorpusSpec::Classification {
                spec: ClassificationSpec::default(),
                n_max: 5,
                val_per_class: 20,
                test_per_class: 50,
            },
        };
        let preset = task.default_preset();
        Self {
            task,
            preset: preset.to_owned(),
            divisor: 4,
            dataset: root.join(match task {
                Task::Anomaly => "data-attributes",
                _ => "data-classification",
            }),
            out: root.join(preset),
            no_ct: false,
            fixed_set_size: 3,
            seeds: RunSeeds {
                init: 0,
                plan: 0,
                dropout: 0,
                eval: 0,
            },
            ct: CtConfig::default(),
            optim: t.adam,
            train: TrainSection {
                max_epochs: t.max_epochs,
                patience: t.patience,
                val_sizes: t.val_sizes,
                val_trials: t.val_trials,
                episodes_per_epoch: t.episodes_per_epoch,
                episode_size: t.episode_size,
                max_prevalence: t.max_prevalence,
                val_episodes: t.val_episodes,
                val_prevalence: t.val_prevalence,
                time_budget_secs: None,
            },
            corpus,
        }
    }

    /// Merges `text` (may be empty) and `overrides` over the defaults of the
    /// task the merged document names.
    pub fn resolve(text: &str, overrides: &[String], root: &Path) -> Result<Self> {
        let mut user: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let task = match user.get("task") {
            Some(v) => v.clone().try_into::<Task>().map_err(|e| Error::Config(format!("task: {e}")))?,
            None => Task::Cic,
        };
        let mut merged = Table::try_from(Self::defaults(task, root)).expect("defaults serialize");
        if let (Some(Value::Table(given)), Some(Value::Table(default))) = (user.get("corpus"), merged.get("corpus")) {
            // a different corpus kind replaces the default wholesale
            if given.get("kind").is_some_and(|k| Some(k) != default.get("kind")) {
                merged.remove("corpus");
            }
        }
        merge(&mut merged, user);
        let cfg: RunConfig = Value::Table(merged).try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], root: &Path) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::resolve(&text, overrides, root)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.model_spec()?;
        if spec.head_mode != self.task.head_mode() {
            return Err(Error::Config(format!(
                "preset {} has a {:?} head, task {:?} needs {:?}",
                self.preset,
                spec.head_mode,
                self.task,
                self.task.head_mode()
            )));
        }
        let anomaly_corpus = matches!(self.corpus, CorpusSpec::Attributes { .. });
        if anomaly_corpus != (self.task == Task::Anomaly) {
            return Err(Error::Config(format!("task {:?} cannot use this corpus kind", self.task)));
        }
        self.ct.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.no_ct && self.fixed_set_size == 0 {
            return Err(Error::Config("fixed_set_size must be positive".into()));
        }
        if self.train.time_budget_secs.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("train.time_budget_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match &self.corpus {
            CorpusSpec::Classification { spec, .. } => spec.num_classes,
            CorpusSpec::Attributes { .. } => 1,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let options = PresetOptions {
            divisor: self.divisor,
            num_classes: self.num_classes(),
            input_channels: 1,
        };
        preset(&self.preset, &options).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let schedule = if self.no_ct {
            SetSchedule::Fixed {
                set_size: self.fixed_set_size,
                batch_sets: self.ct.batch_sets,
            }
        } else {
            SetSchedule::Combinatorial(self.ct)
        };
        let t = &self.train;
        TrainConfig {
            adam: self.optim,
            schedule,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seeds: Seeds {
                plan: self.seeds.plan,
                dropout: self.seeds.dropout,
                eval: self.seeds.eval,
            },
            val_sizes: t.val_sizes.clone(),
            val_trials: t.val_trials,
            episodes_per_epoch: t.episodes_per_epoch,
            episode_size: t.episode_size,
            max_prevalence: t.max_prevalence,
            val_episodes: t.val_episodes,
            val_prevalence: t.val_prevalence,
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_owned()),
    }
}

/// Applies one `a.b.c=value` override.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields a key");
    let mut node = table;
    for k in parents {
        let entry = node.entry((*k).to_owned()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override {assignment:?}: {k} is not a table"))),
        };
    }
    node.insert((*last).to_owned(), parse_value(raw.trim()));
    Ok(())
}
