//! Training loops for every model kind.

use std::collections::BTreeMap;

use crate::controller::{Controller, ControllerConfig, SelectMode};
use crate::error::{Error, Result};
use crate::mdp::{
    run_episode, BoundedSteps, ControllerPolicy, Env, HardcodedPolicy, HorizonMode, Policy,
};
use crate::modules::{ModuleConfig, ModuleSet};
use crate::numeric::adam::{AdamConfig, AdamState};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::rng::{SeededRng, Stream};
use crate::problem::curriculum::Curriculum;
use crate::problem::dataset::{Dataset, LanguagePair, Split};
use crate::problem::expr::ProblemInstance;
use crate::problem::vocab::Task;

use super::baseline::Baseline;
use super::config::{ModelKind, TrainConfig};
use super::eval::{evaluate, EpisodeSolver, EvalReport, EvalRow, Solver};
use super::module_update::module_update;
use super::ppo::controller_update;
use super::rollout::{collect_rollouts, RolloutBuffer};

/// When each curriculum stage begins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumDriver {
    pub cadence: u64,
    pub stages: usize,
    pub enabled: bool,
}

impl CurriculumDriver {
    pub fn stage_at(&self, episodes: u64) -> usize {
        if !self.enabled {
            return self.stages - 1;
        }
        ((episodes / self.cadence) as usize).min(self.stages - 1)
    }

    /// Episode count at which the final stage begins.
    pub fn all_data_added_at(&self) -> u64 {
        if self.enabled {
            self.cadence * (self.stages as u64 - 1)
        } else {
            0
        }
    }
}

/// Everything a trained model consists of.
#[derive(Clone, Debug)]
pub struct Learner {
    pub task: Task,
    pub model: ModelKind,
    pub horizon: HorizonMode,
    pub modules: ModuleSet,
    pub controller: Option<Controller>,
    pub baseline: Option<Baseline>,
}

impl Learner {
    pub fn new(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let modules = ModuleSet::new(cfg.modules, cfg.task.vocab_width(), seed)?;
        let controller = match cfg.model {
            ModelKind::Crl | ModelKind::Hcf => Some(Controller::new(
                cfg.controller,
                cfg.task,
                cfg.modules.reducers,
                cfg.modules.translators,
                seed,
            )?),
            _ => None,
        };
        let baseline = match cfg.model {
            ModelKind::Rnn => Some(Baseline::new(cfg.task, cfg.baseline.hidden, seed)?),
            _ => None,
        };
        Ok(Learner {
            task: cfg.task,
            model: cfg.model,
            horizon: cfg.horizon,
            modules,
            controller,
            baseline,
        })
    }

    /// The controller's policy, or the order-of-operations rule when the
    /// controller is hardcoded.
    pub fn policy(&self, mode: SelectMode) -> Box<dyn Policy + Sync + '_> {
        match &self.controller {
            Some(c) => Box::new(ControllerPolicy {
                controller: c,
                space: self.action_space(),
                mode,
            }),
            None => Box::new(HardcodedPolicy),
        }
    }

    pub fn action_space(&self) -> crate::controller::ActionSpace {
        let mut cfg = TrainConfig::new(self.task, self.model);
        cfg.modules = self.modules.config;
        cfg.horizon = self.horizon;
        cfg.action_space()
    }

    /// Accuracy rows for every group, with greedy action selection.
    pub fn evaluate_groups(
        &self,
        groups: &BTreeMap<(usize, LanguagePair), Vec<ProblemInstance>>,
        split: Split,
        episodes: u64,
        seed: u64,
        max_per_group: Option<usize>,
    ) -> Result<Vec<EvalRow>> {
        if let Some(b) = &self.baseline {
            return evaluate(b, groups, split, episodes, seed, max_per_group);
        }
        let policy = self.policy(SelectMode::Greedy);
        let solver = EpisodeSolver {
            env: Env::new(&self.modules, self.horizon),
            policy: policy.as_ref(),
            seed,
        };
        evaluate(
            &solver as &dyn Solver,
            groups,
            split,
            episodes,
            seed,
            max_per_group,
        )
    }

    /// Greedy answer token for `p`: the single remaining token of the final
    /// state, or `None` when the episode did not reduce to one token.
    pub fn answer(&self, p: &ProblemInstance, seed: u64, index: u64) -> Result<Option<usize>> {
        if let Some(b) = &self.baseline {
            return b.predict(p).map(Some);
        }
        let policy = self.policy(SelectMode::Greedy);
        let env = Env::new(&self.modules, self.horizon);
        let mut rng = SeededRng::new(seed, Stream::Evaluation, index);
        let trace = run_episode(&env, policy.as_ref(), p, &mut rng)?;
        let ids = trace.final_state.argmax_ids();
        Ok((ids.len() == 1).then(|| ids[0]))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let m = self.modules.config;
        let mut ckpt = Checkpoint::new()
            .with_meta("task", self.task)
            .with_meta("model", self.model)
            .with_meta("reducers", m.reducers)
            .with_meta("translators", m.translators)
            .with_meta("module_hidden", m.hidden)
            .with_meta("hardcoded_reducers", m.hardcoded_reducers)
            .with_meta("horizon", horizon_to_string(&self.horizon));
        if let Some(c) = &self.controller {
            ckpt = ckpt
                .with_meta("controller_hidden", c.config.hidden)
                .with_meta("bidirectional", c.config.bidirectional)
                .with_meta("shared_encoder", c.config.shared_encoder);
            c.to_checkpoint(&mut ckpt);
        }
        if let Some(b) = &self.baseline {
            ckpt = ckpt.with_meta("baseline_hidden", b.hidden);
            b.to_checkpoint(&mut ckpt);
        }
        self.modules.to_checkpoint(&mut ckpt);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let parse = |k: &str| -> Result<usize> {
            ckpt.meta(k)?
                .parse()
                .map_err(|e| Error::parse("checkpoint", format!("{k}: {e}")))
        };
        let flag = |k: &str| -> Result<bool> {
            ckpt.meta(k)?
                .parse()
                .map_err(|e| Error::parse("checkpoint", format!("{k}: {e}")))
        };
        let task: Task = ckpt.meta("task")?.parse()?;
        let model: ModelKind = ckpt.meta("model")?.parse()?;
        let config = ModuleConfig {
            reducers: parse("reducers")?,
            translators: parse("translators")?,
            hidden: parse("module_hidden")?,
            hardcoded_reducers: flag("hardcoded_reducers")?,
        };
        let modules = ModuleSet::from_checkpoint(config, task.vocab_width(), ckpt)?;
        let controller = match model {
            ModelKind::Crl | ModelKind::Hcf => {
                let cc = ControllerConfig {
                    hidden: parse("controller_hidden")?,
                    bidirectional: flag("bidirectional")?,
                    shared_encoder: flag("shared_encoder")?,
                };
                Some(Controller::from_checkpoint(
                    cc,
                    task,
                    config.reducers,
                    config.translators,
                    ckpt,
                )?)
            }
            _ => None,
        };
        let baseline = match model {
            ModelKind::Rnn => Some(Baseline::from_checkpoint(
                task,
                parse("baseline_hidden")?,
                ckpt,
            )?),
            _ => None,
        };
        Ok(Learner {
            task,
            model,
            horizon: parse_horizon(ckpt.meta("horizon")?)?,
            modules,
            controller,
            baseline,
        })
    }
}

/// `infinite:<penalty>:<cap|auto>:<noop|terminal>`, `bounded:fixed:<T>` or
/// `bounded:reductions:<extra>`.
pub fn horizon_to_string(h: &HorizonMode) -> String {
    match *h {
        HorizonMode::Infinite {
            step_penalty,
            step_cap,
            halt_noop,
        } => format!(
            "infinite:{}:{}:{}",
            step_penalty,
            step_cap.map_or("auto".to_string(), |c| c.to_string()),
            if halt_noop { "noop" } else { "terminal" }
        ),
        HorizonMode::Bounded(BoundedSteps::Fixed(t)) => format!("bounded:fixed:{t}"),
        HorizonMode::Bounded(BoundedSteps::Reductions { extra }) => {
            format!("bounded:reductions:{extra}")
        }
    }
}

pub fn parse_horizon(s: &str) -> Result<HorizonMode> {
    let bad = || Error::Config(format!("bad horizon {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts[..] {
        ["infinite"] => Ok(HorizonMode::default()),
        ["infinite", p, cap, halt] => Ok(HorizonMode::Infinite {
            step_penalty: p.parse().map_err(|_| bad())?,
            step_cap: match cap {
                "auto" => None,
                c => Some(c.parse().map_err(|_| bad())?),
            },
            halt_noop: match halt {
                "noop" => true,
                "terminal" => false,
                _ => return Err(bad()),
            },
        }),
        ["bounded", "fixed", t] => Ok(HorizonMode::Bounded(BoundedSteps::Fixed(
            t.parse().map_err(|_| bad())?,
        ))),
        ["bounded", "reductions", e] => Ok(HorizonMode::Bounded(BoundedSteps::Reductions {
            extra: e.parse().map_err(|_| bad())?,
        })),
        _ => Err(bad()),
    }
}

/// Hooks for progress output and persistence.
pub trait Observer {
    fn on_eval(&mut self, _rows: &[EvalRow]) {}
    fn on_checkpoint(&mut self, _episodes: u64, _learner: &Learner) -> Result<()> {
        Ok(())
    }
    fn on_event(&mut self, _message: &str) {}
}

pub struct Quiet;

impl Observer for Quiet {}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub learner: Learner,
    pub report: EvalReport,
    pub episodes: u64,
    pub all_data_added_at: u64,
    /// Episode count at which the early-stop target was met.
    pub target_reached_at: Option<u64>,
    pub events: Vec<String>,
}

struct Schedule {
    next_eval: u64,
    next_checkpoint: Option<u64>,
}

struct RunState<'a> {
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    seed: u64,
    driver: CurriculumDriver,
    curriculum: Curriculum,
    lengths: Vec<usize>,
    report: EvalReport,
    events: Vec<String>,
    schedule: Schedule,
    target_reached_at: Option<u64>,
}

impl RunState<'_> {
    fn admitted_max(&self, episodes: u64) -> usize {
        self.lengths[self.driver.stage_at(episodes)]
    }

    fn event(&mut self, observer: &mut dyn Observer, msg: String) {
        observer.on_event(&msg);
        self.events.push(msg);
    }

    fn evaluate(
        &mut self,
        learner: &Learner,
        episodes: u64,
        observer: &mut dyn Observer,
    ) -> Result<()> {
        let max_len = self.admitted_max(episodes);
        let mut rows = Vec::new();
        for &split in &self.cfg.eval_splits {
            let mut groups = self.data.grouped(split);
            if self.cfg.eval_admitted_only {
                groups.retain(|(l, _), _| *l <= max_len);
            }
            rows.extend(learner.evaluate_groups(
                &groups,
                split,
                episodes,
                self.seed,
                self.cfg.eval_max_per_group,
            )?);
        }
        observer.on_eval(&rows);
        self.report.extend(rows);
        if let Some(stop) = self.cfg.early_stop {
            if episodes >= self.driver.all_data_added_at() && self.target_reached_at.is_none() {
                if let Some(acc) = self.report.accuracy(episodes, stop.split, stop.length) {
                    if acc >= stop.threshold {
                        self.target_reached_at = Some(episodes);
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluate and checkpoint when `episodes` passes a scheduled point.
    /// Returns true when training should stop early.
    fn after_episodes(
        &mut self,
        learner: &Learner,
        episodes: u64,
        observer: &mut dyn Observer,
    ) -> Result<bool> {
        if episodes >= self.schedule.next_eval || episodes >= self.cfg.episodes {
            self.evaluate(learner, episodes, observer)?;
            while self.schedule.next_eval <= episodes {
                self.schedule.next_eval += self.cfg.eval_every;
            }
        }
        if let (Some(next), Some(every)) =
            (self.schedule.next_checkpoint, self.cfg.checkpoint_every)
        {
            if episodes >= next {
                observer.on_checkpoint(episodes, learner)?;
                let mut n = next;
                while n <= episodes {
                    n += every;
                }
                self.schedule.next_checkpoint = Some(n);
            }
        }
        Ok(self.target_reached_at.is_some())
    }
}

/// Train one seed of `cfg.model` on `data`.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if data.task != cfg.task {
        return Err(Error::VocabMismatch {
            expected: cfg.task.vocab_width(),
            found: data.task.vocab_width(),
        });
    }
    let curriculum = Curriculum::new(data)?;
    let lengths: Vec<usize> = (0..curriculum.num_stages())
        .map(|i| curriculum.stage(i).max_len)
        .collect();
    let driver = CurriculumDriver {
        cadence: cfg.cadence(),
        stages: curriculum.num_stages(),
        enabled: cfg.curriculum,
    };
    let mut state = RunState {
        cfg,
        data,
        seed,
        driver,
        curriculum,
        lengths,
        report: EvalReport::default(),
        events: Vec::new(),
        schedule: Schedule {
            next_eval: cfg.eval_every,
            next_checkpoint: cfg.checkpoint_every,
        },
        target_reached_at: None,
    };
    let mut learner = Learner::new(cfg, seed)?;
    let episodes = match cfg.model {
        ModelKind::Rnn => train_baseline_loop(&mut state, &mut learner, observer)?,
        _ => train_crl_loop(&mut state, &mut learner, observer)?,
    };
    Ok(RunOutcome {
        learner,
        report: state.report,
        episodes,
        all_data_added_at: driver.all_data_added_at(),
        target_reached_at: state.target_reached_at,
        events: state.events,
    })
}

fn train_crl_loop(
    state: &mut RunState,
    learner: &mut Learner,
    observer: &mut dyn Observer,
) -> Result<u64> {
    let cfg = state.cfg;
    let space = cfg.action_space();
    let mut controller_adam = learner
        .controller
        .as_ref()
        .map(|c| AdamState::new(&c.store, AdamConfig::with_lr(cfg.controller_lr)));
    let mut module_adam =
        AdamState::new(&learner.modules.store, AdamConfig::with_lr(cfg.module_lr));
    let mut buffer = RolloutBuffer::default();
    let mut episodes = 0u64;
    let mut updates = 0u64;
    let mut stage = usize::MAX;
    while episodes < cfg.episodes {
        buffer.clear();
        let block_end = (episodes + cfg.controller_every as u64).min(cfg.episodes);
        let mut stop = false;
        while episodes < block_end {
            let n = (cfg.modules_every as u64).min(block_end - episodes) as usize;
            let s = state.driver.stage_at(episodes);
            if s != stage {
                stage = s;
                let max_len = state.lengths[s];
                state.event(
                    observer,
                    format!("episode {episodes}: curriculum stage {s} (max length {max_len})"),
                );
            }
            let traces = {
                let pool = state.curriculum.pool(state.curriculum.stage(s));
                let env = Env::new(&learner.modules, cfg.horizon);
                let policy: Box<dyn Policy + Sync> = match &learner.controller {
                    Some(c) => Box::new(ControllerPolicy {
                        controller: c,
                        space: space.clone(),
                        mode: SelectMode::Sample,
                    }),
                    None => Box::new(HardcodedPolicy),
                };
                collect_rollouts(
                    &env,
                    policy.as_ref(),
                    pool,
                    state.seed,
                    episodes,
                    n,
                    cfg.workers,
                )?
            };
            episodes += n as u64;
            if cfg.model.learns_modules() {
                let stats = module_update(&mut learner.modules, &mut module_adam, &traces)?;
                if stats.skipped_non_finite {
                    state.event(
                        observer,
                        format!("episode {episodes}: module update skipped (non-finite)"),
                    );
                }
            }
            buffer.extend(traces);
            if state.after_episodes(learner, episodes, observer)? {
                stop = true;
                break;
            }
        }
        if let (Some(c), Some(adam)) = (learner.controller.as_mut(), controller_adam.as_mut()) {
            if !stop {
                let stats =
                    controller_update(c, adam, &buffer.traces, &space, cfg, state.seed, updates)?;
                updates += 1;
                if stats.aborted {
                    state.event(
                        observer,
                        format!("episode {episodes}: controller update aborted (non-finite)"),
                    );
                }
            }
        }
        if stop {
            break;
        }
    }
    Ok(episodes)
}

fn train_baseline_loop(
    state: &mut RunState,
    learner: &mut Learner,
    observer: &mut dyn Observer,
) -> Result<u64> {
    let cfg = state.cfg;
    let baseline = learner
        .baseline
        .as_ref()
        .expect("rnn learner has a baseline");
    let mut adam = AdamState::new(&baseline.store, AdamConfig::with_lr(cfg.baseline.lr));
    let mut episodes = 0u64;
    let mut step = 0u64;
    let mut stage = usize::MAX;
    while episodes < cfg.episodes {
        let s = state.driver.stage_at(episodes);
        if s != stage {
            stage = s;
            let max_len = state.lengths[s];
            state.event(
                observer,
                format!("episode {episodes}: curriculum stage {s} (max length {max_len})"),
            );
        }
        let n = (cfg.baseline.batch_size as u64).min(cfg.episodes - episodes) as usize;
        let pool = state.curriculum.pool(state.curriculum.stage(s));
        let mut rng = SeededRng::new(state.seed, Stream::Baseline, 1 + step);
        let batch: Vec<&ProblemInstance> = (0..n).map(|_| &pool[rng.below(pool.len())]).collect();
        let baseline = learner
            .baseline
            .as_mut()
            .expect("rnn learner has a baseline");
        if baseline.train_step(&mut adam, &batch)?.is_none() {
            state.event(
                observer,
                format!("episode {episodes}: baseline step skipped (non-finite)"),
            );
        }
        step += 1;
        episodes += n as u64;
        if state.after_episodes(learner, episodes, observer)? {
            break;
        }
    }
    Ok(episodes)
}
