//! The environment in which the controller acts: applying modules to the
//! current state, halting, rewards, and execution traces.

use std::fmt::Write as _;

use crate::controller::{
    hardcoded_controller_action, Action, ActionSample, ActionSpace, Controller, SelectMode,
};
use crate::error::{Error, Result};
use crate::modules::ModuleSet;
use crate::numeric::rng::SeededRng;
use crate::problem::expr::ProblemInstance;
use crate::problem::vocab::{encode, render_ids, surface, Language, Task, TokenSeq, BLOCK_SIZE};

pub const DEFAULT_STEP_PENALTY: f64 = -0.01;

/// How many actions a bounded episode takes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundedSteps {
    Fixed(usize),
    /// `k - 1` for a `k`-term problem, plus `extra`.
    Reductions {
        extra: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HorizonMode {
    Infinite {
        step_penalty: f64,
        /// `None` means `2 · initial length + 10`.
        step_cap: Option<usize>,
        /// HALT on a sequence longer than one row does nothing.
        halt_noop: bool,
    },
    Bounded(BoundedSteps),
}

impl Default for HorizonMode {
    fn default() -> Self {
        HorizonMode::Infinite {
            step_penalty: DEFAULT_STEP_PENALTY,
            step_cap: None,
            halt_noop: true,
        }
    }
}

impl HorizonMode {
    pub fn allows_halt(&self) -> bool {
        matches!(self, HorizonMode::Infinite { .. })
    }

    fn limit(&self, problem: &ProblemInstance, initial_len: usize) -> usize {
        match *self {
            HorizonMode::Infinite { step_cap, .. } => step_cap.unwrap_or(2 * initial_len + 10),
            HorizonMode::Bounded(BoundedSteps::Fixed(t)) => t,
            HorizonMode::Bounded(BoundedSteps::Reductions { extra }) => {
                problem.num_terms() - 1 + extra
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub seq: TokenSeq,
    pub target: Language,
    pub answer_id: usize,
    pub step: usize,
    pub limit: usize,
    pub halted: bool,
}

/// What an action actually did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effect {
    /// `inputs` and `output` are argmax token ids.
    Reduced {
        window: usize,
        inputs: [usize; 3],
        output: usize,
    },
    Translated,
    HaltIgnored,
    /// Reduction on a state too short to hold a window.
    ReduceTooShort,
    /// The chosen reducer rejected the window.
    InvalidWindow {
        window: usize,
    },
    Halted,
}

impl Effect {
    pub fn is_noop(&self) -> bool {
        matches!(
            self,
            Effect::HaltIgnored | Effect::ReduceTooShort | Effect::InvalidWindow { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub effect: Effect,
    pub reward: f64,
    pub done: bool,
}

/// The evaluator: a module set plus horizon rules.
#[derive(Clone, Copy, Debug)]
pub struct Env<'m> {
    pub modules: &'m ModuleSet,
    pub mode: HorizonMode,
}

impl<'m> Env<'m> {
    pub fn new(modules: &'m ModuleSet, mode: HorizonMode) -> Self {
        Env { modules, mode }
    }

    pub fn reset(&self, problem: &ProblemInstance) -> Result<EnvState> {
        let seq = encode(&problem.input_ids(), self.modules.width)?;
        let limit = self.mode.limit(problem, seq.len());
        Ok(EnvState {
            seq,
            target: problem.tgt,
            answer_id: problem.answer_id(),
            step: 0,
            limit,
            halted: false,
        })
    }

    pub fn step(&self, state: &mut EnvState, action: &Action) -> Result<StepOutcome> {
        if state.halted {
            return Err(Error::InvalidArgument("episode already finished".into()));
        }
        let (penalty, halt_noop) = match self.mode {
            HorizonMode::Infinite {
                step_penalty,
                halt_noop,
                ..
            } => (step_penalty, halt_noop),
            HorizonMode::Bounded(_) => (0.0, false),
        };
        let effect = match *action {
            Action::Halt => {
                if !self.mode.allows_halt() {
                    return Err(Error::InvalidArgument(
                        "HALT is not an action in bounded episodes".into(),
                    ));
                }
                if halt_noop && state.seq.len() > 1 {
                    Effect::HaltIgnored
                } else {
                    state.halted = true;
                    return Ok(StepOutcome {
                        effect: Effect::Halted,
                        reward: terminal_reward(&state.seq, state.answer_id),
                        done: true,
                    });
                }
            }
            Action::Reduce { reducer, window } => {
                self.modules.reducer(reducer)?;
                match window {
                    _ if state.seq.len() < 3 => Effect::ReduceTooShort,
                    None => Effect::ReduceTooShort,
                    Some(w) if w + 3 > state.seq.len() => {
                        return Err(Error::InvalidArgument(format!(
                            "window {w} out of range for length {}",
                            state.seq.len()
                        )))
                    }
                    Some(w) => {
                        let rows = [state.seq.row(w), state.seq.row(w + 1), state.seq.row(w + 2)];
                        match self.modules.reducer_apply(reducer, rows)? {
                            None => Effect::InvalidWindow { window: w },
                            Some(out) => {
                                let ids = state.seq.argmax_ids();
                                let output = crate::numeric::tensor::argmax(&out);
                                state.seq.splice_window(w, &out);
                                Effect::Reduced {
                                    window: w,
                                    inputs: [ids[w], ids[w + 1], ids[w + 2]],
                                    output,
                                }
                            }
                        }
                    }
                }
            }
            Action::Translate { translator } => {
                state.seq = self.modules.translator_apply(translator, &state.seq)?;
                Effect::Translated
            }
        };
        state.step += 1;
        let done = state.step >= state.limit;
        let mut reward = penalty;
        if done {
            state.halted = true;
            reward += terminal_reward(&state.seq, state.answer_id);
        }
        Ok(StepOutcome {
            effect,
            reward,
            done,
        })
    }
}

/// 1 when exactly one row remains and its most likely token is the answer.
pub fn terminal_reward(seq: &TokenSeq, answer_id: usize) -> f64 {
    if seq.len() == 1 && seq.argmax_ids()[0] == answer_id {
        1.0
    } else {
        0.0
    }
}

pub trait Policy {
    fn act(&self, state: &EnvState, rng: &mut SeededRng) -> Result<ActionSample>;
}

pub struct ControllerPolicy<'c> {
    pub controller: &'c Controller,
    pub space: ActionSpace,
    pub mode: SelectMode,
}

impl Policy for ControllerPolicy<'_> {
    fn act(&self, state: &EnvState, rng: &mut SeededRng) -> Result<ActionSample> {
        let target = match self.controller.task {
            Task::Multilingual => Some(state.target),
            Task::Numerical => None,
        };
        self.controller
            .sample_action(&state.seq, target, &self.space, self.mode, rng)
    }
}

pub struct HardcodedPolicy;

impl Policy for HardcodedPolicy {
    fn act(&self, state: &EnvState, _rng: &mut SeededRng) -> Result<ActionSample> {
        Ok(ActionSample {
            action: hardcoded_controller_action(&state.seq),
            log_prob: 0.0,
            entropy: 0.0,
            value: 0.0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    /// State the action was taken in.
    pub state: TokenSeq,
    pub sample: ActionSample,
    pub effect: Effect,
    pub reward: f64,
}

impl TraceStep {
    pub fn state_ids(&self) -> Vec<usize> {
        self.state.argmax_ids()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub problem: ProblemInstance,
    pub steps: Vec<TraceStep>,
    pub final_state: TokenSeq,
    pub terminal_reward: f64,
    pub total_return: f64,
    /// The episode ended on a HALT rather than the step limit.
    pub halted_by_policy: bool,
}

impl TraceRecord {
    pub fn correct(&self) -> bool {
        self.terminal_reward > 0.5
    }

    pub fn num_reductions(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s.effect, Effect::Reduced { .. }))
            .count()
    }

    /// Every effective reduction happened and a single row remains.
    pub fn fully_reduced(&self) -> bool {
        self.final_state.len() == 1
    }
}

pub fn run_episode(
    env: &Env,
    policy: &dyn Policy,
    problem: &ProblemInstance,
    rng: &mut SeededRng,
) -> Result<TraceRecord> {
    let mut state = env.reset(problem)?;
    let mut steps = Vec::new();
    let mut total = 0.0;
    let (terminal, halted_by_policy) = loop {
        let sample = policy.act(&state, rng)?;
        let before = state.seq.clone();
        let outcome = env.step(&mut state, &sample.action)?;
        total += outcome.reward;
        steps.push(TraceStep {
            state: before,
            sample,
            effect: outcome.effect,
            reward: outcome.reward,
        });
        if outcome.done {
            break (
                terminal_reward(&state.seq, state.answer_id),
                outcome.effect == Effect::Halted,
            );
        }
    };
    Ok(TraceRecord {
        problem: problem.clone(),
        steps,
        final_state: state.seq,
        terminal_reward: terminal,
        total_return: total,
        halted_by_policy,
    })
}

/// Replay recorded actions from the problem's initial state.
pub fn replay(env: &Env, trace: &TraceRecord) -> Result<Vec<TokenSeq>> {
    let mut state = env.reset(&trace.problem)?;
    let mut states = Vec::with_capacity(trace.steps.len() + 1);
    for step in &trace.steps {
        states.push(state.seq.clone());
        env.step(&mut state, &step.sample.action)?;
    }
    states.push(state.seq);
    Ok(states)
}

const ANNOTATION_COLUMN: usize = 46;

fn render_state(ids: &[usize], window: Option<usize>) -> String {
    let Some(w) = window else {
        return render_ids(ids);
    };
    let compact = ids.iter().all(|&id| id < BLOCK_SIZE);
    let join = |part: &[usize]| render_ids(part);
    let mut parts = Vec::new();
    if w > 0 {
        parts.push(join(&ids[..w]));
    }
    parts.push(format!("[{}]", join(&ids[w..w + 3])));
    if w + 3 < ids.len() {
        parts.push(join(&ids[w + 3..]));
    }
    parts.join(if compact { "" } else { " " })
}

fn trace_line(out: &mut String, state: &str, note: &str) {
    let _ = writeln!(
        out,
        "{state:<width$}# {note}",
        width = ANNOTATION_COLUMN.max(state.chars().count() + 1)
    );
}

/// Text rendering of an episode: one line per step showing the most likely
/// token at each position, with the reduced window in brackets.
pub fn render_trace(trace: &TraceRecord) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        let ids = step.state_ids();
        let (window, note) = match (step.effect, step.sample.action) {
            (
                Effect::Reduced {
                    window,
                    inputs,
                    output,
                },
                Action::Reduce { reducer, .. },
            ) => (
                Some(window),
                format!(
                    "{} {} {} = {}  (r{reducer})",
                    surface(inputs[0]),
                    surface(inputs[1]),
                    surface(inputs[2]),
                    surface(output)
                ),
            ),
            (Effect::Translated, Action::Translate { translator }) => {
                (None, format!("translate  (t{translator})"))
            }
            (Effect::HaltIgnored, _) => (None, "tried to HALT".to_string()),
            (Effect::ReduceTooShort, _) => (None, "tried to REDUCE".to_string()),
            (Effect::InvalidWindow { window }, _) => (Some(window), "invalid window".to_string()),
            (Effect::Halted, _) => (None, "HALT".to_string()),
            (effect, action) => (None, format!("{effect:?} {action:?}")),
        };
        trace_line(&mut out, &render_state(&ids, window), &note);
    }
    if !trace.halted_by_policy {
        trace_line(&mut out, &trace.final_state.render(), "step limit");
    }
    out.push_str("END\n");
    out
}

/// Metadata line written before each rendered episode in a trace dump.
pub fn trace_header(trace: &TraceRecord, seed: u64) -> String {
    format!(
        "## seed={} terms={} src={} tgt={} answer={} return={:.4}",
        seed,
        trace.problem.num_terms(),
        trace.problem.src.name(),
        trace.problem.tgt.name(),
        surface(trace.problem.answer_id()),
        trace.total_return
    )
}
