//! Experiment configuration as flat `key=value` text.
//!
//! Values are layered: built-in defaults for the chosen task and model, then
//! a config file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mdp::HorizonMode;
use crate::problem::dataset::{
    build_multilingual_dataset, build_numerical_dataset, Dataset, MultilingualSpec, Split,
    MULTILINGUAL_LENGTHS, NUMERICAL_LENGTHS,
};
use crate::problem::vocab::Task;
use crate::training::runner::{horizon_to_string, parse_horizon};
use crate::training::{EarlyStop, ModelKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data_scale: usize,
    pub lengths: RangeInclusive<usize>,
    pub data_seed: u64,
    pub seed: u64,
    pub seeds: usize,
    /// Existing dataset directory; when absent the dataset is generated.
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub train: TrainConfig,
}

pub fn parse_lengths(s: &str) -> Result<RangeInclusive<usize>> {
    let bad = || Error::Config(format!("lengths must look like 2:5, got {s:?}"));
    let (a, b) = s.split_once(':').unwrap_or((s, s));
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

/// `2:5` style range or a comma list such as `6,10,20`.
pub fn parse_length_list(s: &str) -> Result<Vec<usize>> {
    if s.contains(',') {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad length {p:?}")))
            })
            .collect()
    } else {
        Ok(parse_lengths(s)?.collect())
    }
}

fn lengths_to_string(r: &RangeInclusive<usize>) -> String {
    format!("{}:{}", r.start(), r.end())
}

fn opt_to_string<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), ToString::to_string)
}

/// Parse `key=value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn defaults(task: Task, model: ModelKind) -> Self {
        let lengths = match task {
            Task::Numerical => NUMERICAL_LENGTHS,
            Task::Multilingual => MULTILINGUAL_LENGTHS,
        };
        ExperimentConfig {
            data_scale: 1,
            lengths,
            data_seed: 0,
            seed: 0,
            seeds: 1,
            data: None,
            output: None,
            train: TrainConfig::new(task, model),
        }
    }

    /// Defaults for the task and model named in `values`, with every key of
    /// `values` applied on top.
    pub fn from_pairs(values: &BTreeMap<String, String>) -> Result<Self> {
        let task: Task = values
            .get("task")
            .map_or(Ok(Task::Numerical), |s| s.parse())?;
        let model: ModelKind = values
            .get("model")
            .map_or(Ok(ModelKind::Crl), |s| s.parse())?;
        let mut cfg = ExperimentConfig::defaults(task, model);
        for (k, v) in values.iter().filter(|(k, _)| *k != "task" && *k != "model") {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
            match v {
                "none" | "all" => Ok(None),
                v => num(key, v).map(Some),
            }
        }
        let t = &mut self.train;
        match key {
            "task" | "model" => {
                return Err(Error::Config(format!(
                    "{key} fixes the defaults and cannot be changed after construction"
                )))
            }
            "data_scale" => self.data_scale = num(key, value)?,
            "lengths" => self.lengths = parse_lengths(value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "seeds" => self.seeds = num(key, value)?,
            "data" => self.data = (value != "none").then(|| PathBuf::from(value)),
            "output" => self.output = (value != "none").then(|| PathBuf::from(value)),
            "reducers" => t.modules.reducers = num(key, value)?,
            "translators" => t.modules.translators = num(key, value)?,
            "module_hidden" => t.modules.hidden = num(key, value)?,
            "hardcoded_reducers" => t.modules.hardcoded_reducers = num(key, value)?,
            "controller_hidden" => t.controller.hidden = num(key, value)?,
            "bidirectional" => t.controller.bidirectional = num(key, value)?,
            "shared_encoder" => t.controller.shared_encoder = num(key, value)?,
            "horizon" => t.horizon = parse_horizon(value)?,
            "k" => t.controller_every = num(key, value)?,
            "k_prime" => t.modules_every = num(key, value)?,
            "clip_epsilon" => t.clip_epsilon = num(key, value)?,
            "ppo_epochs" => t.ppo_epochs = num(key, value)?,
            "minibatch_steps" => t.minibatch_steps = num(key, value)?,
            "entropy_coef" => t.entropy_coef = num(key, value)?,
            "value_coef" => t.value_coef = num(key, value)?,
            "normalize_advantages" => t.normalize_advantages = num(key, value)?,
            "max_grad_norm" => t.max_grad_norm = opt(key, value)?,
            "controller_lr" => t.controller_lr = num(key, value)?,
            "module_lr" => t.module_lr = num(key, value)?,
            "baseline_hidden" => t.baseline.hidden = num(key, value)?,
            "baseline_batch" => t.baseline.batch_size = num(key, value)?,
            "baseline_lr" => t.baseline.lr = num(key, value)?,
            "curriculum" => t.curriculum = num(key, value)?,
            "curriculum_cadence" => {
                t.curriculum_cadence = match value {
                    "default" => None,
                    v => Some(num(key, v)?),
                }
            }
            "episodes" => t.episodes = num(key, value)?,
            "eval_every" => t.eval_every = num(key, value)?,
            "eval_splits" => {
                t.eval_splits = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "eval_max_per_group" => t.eval_max_per_group = opt(key, value)?,
            "eval_admitted_only" => t.eval_admitted_only = num(key, value)?,
            "early_stop" => {
                t.early_stop = match value {
                    "none" => None,
                    v => {
                        let parts: Vec<&str> = v.split(':').collect();
                        let [split, length, threshold] = parts[..] else {
                            return Err(Error::Config(format!(
                                "early_stop must be split:length:threshold, got {v:?}"
                            )));
                        };
                        Some(EarlyStop {
                            split: split.parse()?,
                            length: num(key, length)?,
                            threshold: num(key, threshold)?,
                        })
                    }
                }
            }
            "checkpoint_every" => t.checkpoint_every = opt(key, value)?,
            "workers" => t.workers = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical text holding every key.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("task", t.task.to_string());
        kv("model", t.model.to_string());
        kv("data_scale", self.data_scale.to_string());
        kv("lengths", lengths_to_string(&self.lengths));
        kv("data_seed", self.data_seed.to_string());
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        kv("data", path(&self.data));
        kv("output", path(&self.output));
        kv("reducers", t.modules.reducers.to_string());
        kv("translators", t.modules.translators.to_string());
        kv("module_hidden", t.modules.hidden.to_string());
        kv(
            "hardcoded_reducers",
            t.modules.hardcoded_reducers.to_string(),
        );
        kv("controller_hidden", t.controller.hidden.to_string());
        kv("bidirectional", t.controller.bidirectional.to_string());
        kv("shared_encoder", t.controller.shared_encoder.to_string());
        kv("horizon", horizon_to_string(&t.horizon));
        kv("k", t.controller_every.to_string());
        kv("k_prime", t.modules_every.to_string());
        kv("clip_epsilon", t.clip_epsilon.to_string());
        kv("ppo_epochs", t.ppo_epochs.to_string());
        kv("minibatch_steps", t.minibatch_steps.to_string());
        kv("entropy_coef", t.entropy_coef.to_string());
        kv("value_coef", t.value_coef.to_string());
        kv("normalize_advantages", t.normalize_advantages.to_string());
        kv("max_grad_norm", opt_to_string(&t.max_grad_norm));
        kv("controller_lr", t.controller_lr.to_string());
        kv("module_lr", t.module_lr.to_string());
        kv("baseline_hidden", t.baseline.hidden.to_string());
        kv("baseline_batch", t.baseline.batch_size.to_string());
        kv("baseline_lr", t.baseline.lr.to_string());
        kv("curriculum", t.curriculum.to_string());
        kv("curriculum_cadence", t.cadence().to_string());
        kv("episodes", t.episodes.to_string());
        kv("eval_every", t.eval_every.to_string());
        kv(
            "eval_splits",
            t.eval_splits
                .iter()
                .map(Split::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("eval_max_per_group", opt_to_string(&t.eval_max_per_group));
        kv("eval_admitted_only", t.eval_admitted_only.to_string());
        kv(
            "early_stop",
            t.early_stop.map_or("none".to_string(), |e| {
                format!("{}:{}:{}", e.split, e.length, e.threshold)
            }),
        );
        kv("checkpoint_every", opt_to_string(&t.checkpoint_every));
        kv("workers", t.workers.to_string());
        out
    }

    pub fn horizon(&self) -> HorizonMode {
        self.train.horizon
    }

    /// Generate the dataset the config describes.
    pub fn dataset(&self) -> Result<Dataset> {
        match self.train.task {
            Task::Numerical => {
                build_numerical_dataset(self.data_scale, self.lengths.clone(), self.data_seed)
            }
            Task::Multilingual => build_multilingual_dataset(
                &MultilingualSpec {
                    scale: self.data_scale,
                    lengths: self.lengths.clone(),
                    ..MultilingualSpec::default()
                },
                self.data_seed,
            ),
        }
    }
}
