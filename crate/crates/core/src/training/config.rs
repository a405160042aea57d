use std::fmt;
use std::str::FromStr;

use crate::controller::{ActionSpace, ControllerConfig, WindowRule};
use crate::error::{Error, Result};
use crate::mdp::HorizonMode;
use crate::modules::ModuleConfig;
use crate::problem::dataset::Split;
use crate::problem::vocab::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Crl,
    /// Sequence-to-sequence recurrent baseline.
    Rnn,
    /// Hardcoded controller, learned modules.
    Hcc,
    /// Hardcoded reducers, learned controller restricted to operator windows.
    Hcf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Crl => "crl",
            ModelKind::Rnn => "rnn",
            ModelKind::Hcc => "hcc",
            ModelKind::Hcf => "hcf",
        }
    }

    pub fn learns_controller(self) -> bool {
        matches!(self, ModelKind::Crl | ModelKind::Hcf)
    }

    pub fn learns_modules(self) -> bool {
        matches!(self, ModelKind::Crl | ModelKind::Hcc)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crl" => Ok(ModelKind::Crl),
            "rnn" => Ok(ModelKind::Rnn),
            "hcc" => Ok(ModelKind::Hcc),
            "hcf" => Ok(ModelKind::Hcf),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Stop once `split` accuracy at `length` reaches `threshold`, checked at
/// evaluation points after every length has been admitted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    pub split: Split,
    pub length: usize,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 128,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub model: ModelKind,
    pub controller: ControllerConfig,
    pub modules: ModuleConfig,
    pub baseline: BaselineConfig,
    pub horizon: HorizonMode,

    /// Episodes per controller update (`k`).
    pub controller_every: usize,
    /// Episodes per module update (`k′`).
    pub modules_every: usize,
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub minibatch_steps: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub max_grad_norm: Option<f64>,
    pub controller_lr: f64,
    pub module_lr: f64,

    pub curriculum: bool,
    /// Episodes between curriculum stages; `None` picks the model default.
    pub curriculum_cadence: Option<u64>,
    pub episodes: u64,
    pub eval_every: u64,
    pub eval_splits: Vec<Split>,
    /// Cap on instances evaluated per (length, pair, split); `None` means all.
    pub eval_max_per_group: Option<usize>,
    /// Evaluate only lengths admitted so far.
    pub eval_admitted_only: bool,
    pub early_stop: Option<EarlyStop>,
    pub checkpoint_every: Option<u64>,
    pub workers: usize,
}

pub const CRL_CURRICULUM_CADENCE: u64 = 100_000;
pub const BASELINE_CURRICULUM_CADENCE: u64 = 50_000;

impl TrainConfig {
    pub fn new(task: Task, model: ModelKind) -> Self {
        let modules = match (task, model) {
            (_, ModelKind::Hcf) => ModuleConfig::hardcoded(),
            (Task::Numerical, _) => ModuleConfig::numerical(1),
            (Task::Multilingual, _) => ModuleConfig::multilingual(),
        };
        TrainConfig {
            task,
            model,
            controller: ControllerConfig::default(),
            modules,
            baseline: BaselineConfig::default(),
            horizon: HorizonMode::default(),
            controller_every: 1024,
            modules_every: 256,
            clip_epsilon: 0.2,
            ppo_epochs: 4,
            minibatch_steps: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            normalize_advantages: false,
            max_grad_norm: None,
            controller_lr: 3e-4,
            module_lr: 1e-3,
            curriculum: true,
            curriculum_cadence: None,
            episodes: 1_000_000,
            eval_every: 10_000,
            eval_splits: vec![Split::Train, Split::Val, Split::Test],
            eval_max_per_group: None,
            eval_admitted_only: false,
            early_stop: None,
            checkpoint_every: None,
            workers: 1,
        }
    }

    pub fn cadence(&self) -> u64 {
        self.curriculum_cadence.unwrap_or(match self.model {
            ModelKind::Rnn => BASELINE_CURRICULUM_CADENCE,
            _ => CRL_CURRICULUM_CADENCE,
        })
    }

    pub fn step_penalty(&self) -> f64 {
        match self.horizon {
            HorizonMode::Infinite { step_penalty, .. } => step_penalty,
            HorizonMode::Bounded(_) => 0.0,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        let windows = match self.model {
            ModelKind::Hcf => WindowRule::OperatorCentered,
            _ => WindowRule::All,
        };
        ActionSpace::new(
            self.task,
            self.horizon.allows_halt(),
            self.modules.reducers,
            self.modules.translators,
            windows,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.controller_every == 0 || self.modules_every == 0 {
            return bad("update cadences must be positive");
        }
        if self.modules_every > self.controller_every {
            return bad("module cadence must not exceed controller cadence");
        }
        if self.ppo_epochs == 0 || self.minibatch_steps == 0 {
            return bad("ppo epochs and minibatch size must be positive");
        }
        if self.clip_epsilon.is_nan() || self.clip_epsilon < 0.0 {
            return bad("clip epsilon must be non-negative");
        }
        if self.modules.reducers == 0 {
            return bad("at least one reducer is required");
        }
        if self.task == Task::Numerical && self.modules.translators > 0 {
            return bad("the numerical task has no translators");
        }
        if matches!(self.model, ModelKind::Hcc | ModelKind::Hcf) && self.task != Task::Numerical {
            return bad("hardcoded ablations are defined for the numerical task");
        }
        if self.model == ModelKind::Hcf && !self.modules.hardcoded_reducers {
            return bad("hcf requires hardcoded reducers");
        }
        if self.model != ModelKind::Hcf && self.modules.hardcoded_reducers {
            return bad("hardcoded reducers are only used by hcf");
        }
        if self.eval_every == 0 {
            return bad("eval interval must be positive");
        }
        if self.workers == 0 {
            return bad("at least one worker is required");
        }
        Ok(())
    }
}
