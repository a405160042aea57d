//! The policy and value function.
//!
//! A recurrent encoder reads the current state row by row (with the target
//! language one-hot appended to every row). Hierarchical heads then choose an
//! action kind, a module, and for reductions a window. The window scorer is a
//! single linear map applied to the features of each window's three
//! positions, so it works for any sequence length.

use crate::error::{Error, Result};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::gru::{gru_sequence, GruParams};
use crate::numeric::init::{init_params, Init};
use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::rng::{SeededRng, Stream};
use crate::numeric::tensor::{argmax, Tensor};
use crate::problem::vocab::{
    decode_token, Language, Operator, Symbol, Task, TokenSeq, NUM_LANGUAGES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Halt,
    Reduce,
    Translate,
}

impl ActionKind {
    pub fn head_index(self) -> usize {
        match self {
            ActionKind::Halt => 0,
            ActionKind::Reduce => 1,
            ActionKind::Translate => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Halt,
    /// `window` is `None` when the state has no candidate window.
    Reduce {
        reducer: usize,
        window: Option<usize>,
    },
    Translate {
        translator: usize,
    },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Halt => ActionKind::Halt,
            Action::Reduce { .. } => ActionKind::Reduce,
            Action::Translate { .. } => ActionKind::Translate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    /// Sum of the log-probabilities of every choice actually made.
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    /// Argmax at every level, ties toward the lowest index.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowRule {
    /// Every run of three consecutive positions.
    All,
    /// Only windows whose middle token decodes to an operator.
    OperatorCentered,
}

/// Which choices the controller may make.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSpace {
    pub kinds: Vec<ActionKind>,
    pub num_reducers: usize,
    pub num_translators: usize,
    pub windows: WindowRule,
}

impl ActionSpace {
    pub fn new(
        task: Task,
        allow_halt: bool,
        num_reducers: usize,
        num_translators: usize,
        windows: WindowRule,
    ) -> Self {
        let mut kinds = Vec::with_capacity(3);
        if allow_halt {
            kinds.push(ActionKind::Halt);
        }
        kinds.push(ActionKind::Reduce);
        if task == Task::Multilingual && num_translators > 0 {
            kinds.push(ActionKind::Translate);
        }
        ActionSpace {
            kinds,
            num_reducers,
            num_translators,
            windows,
        }
    }

    /// Candidate window start positions for a state of `len` rows.
    pub fn candidate_windows(&self, state: &TokenSeq) -> Vec<usize> {
        let n = state.len().saturating_sub(2);
        match self.windows {
            WindowRule::All => (0..n).collect(),
            WindowRule::OperatorCentered => (0..n)
                .filter(|&w| {
                    matches!(
                        decode_token(argmax(state.row(w + 1))),
                        Some((_, Symbol::Op(_)))
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub bidirectional: bool,
    pub shared_encoder: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 128,
            bidirectional: true,
            shared_encoder: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Encoder {
    fwd: GruParams,
    bwd: Option<GruParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn register(
        store: &mut ParamStore,
        name: &str,
        out: usize,
        inp: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            init_params(&[out, inp], Init::UniformXavier, rng),
        )?;
        let b = store.add(format!("{name}.b"), init_params(&[out], Init::Zeros, rng))?;
        Ok(Linear { w, b })
    }

    fn apply(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(w, x)?;
        g.add(y, b)
    }
}

/// Encoder output for one state.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub features: Vec<NodeId>,
    pub summary: NodeId,
    pub value_summary: NodeId,
}

/// Graph nodes for the distributions at one state.
#[derive(Clone, Debug)]
pub struct PolicyHeads {
    pub encoded: Encoded,
    /// Log-probabilities over the allowed kinds, in `ActionSpace::kinds` order.
    pub kind_logp: NodeId,
    pub reducer_logp: NodeId,
    pub translator_logp: Option<NodeId>,
    pub value: NodeId,
}

#[derive(Clone, Debug)]
pub struct Controller {
    pub config: ControllerConfig,
    pub task: Task,
    pub vocab_width: usize,
    pub num_reducers: usize,
    pub num_translators: usize,
    pub store: ParamStore,
    policy_enc: Encoder,
    value_enc: Option<Encoder>,
    kind_head: Linear,
    reducer_head: Linear,
    translator_head: Option<Linear>,
    window_head: Linear,
    value_head: Linear,
}

impl Controller {
    pub fn new(
        config: ControllerConfig,
        task: Task,
        num_reducers: usize,
        num_translators: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_reducers == 0 {
            return Err(Error::InvalidArgument(
                "controller needs at least one reducer".into(),
            ));
        }
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed, Stream::ControllerInit, 0);
        let vocab_width = task.vocab_width();
        let input = vocab_width + Self::target_width(task);
        let h = config.hidden;
        let feat = if config.bidirectional { 2 * h } else { h };

        let mut encoder = |store: &mut ParamStore, prefix: &str| -> Result<Encoder> {
            let fwd = GruParams::register(store, &format!("{prefix}.fwd"), input, h, &mut rng)?;
            let bwd = if config.bidirectional {
                Some(GruParams::register(
                    store,
                    &format!("{prefix}.bwd"),
                    input,
                    h,
                    &mut rng,
                )?)
            } else {
                None
            };
            Ok(Encoder { fwd, bwd })
        };
        let policy_enc = encoder(&mut store, "controller.enc")?;
        let value_enc = if config.shared_encoder {
            None
        } else {
            Some(encoder(&mut store, "controller.value_enc")?)
        };
        let mut rng = SeededRng::new(seed, Stream::ControllerInit, 1);
        let kind_head = Linear::register(&mut store, "controller.kind", 3, feat, &mut rng)?;
        let reducer_head = Linear::register(
            &mut store,
            "controller.reducer",
            num_reducers,
            feat,
            &mut rng,
        )?;
        let translator_head = if num_translators > 0 {
            Some(Linear::register(
                &mut store,
                "controller.translator",
                num_translators,
                feat,
                &mut rng,
            )?)
        } else {
            None
        };
        let window_head = Linear::register(
            &mut store,
            "controller.window",
            num_reducers,
            3 * feat,
            &mut rng,
        )?;
        let value_head = Linear::register(&mut store, "controller.value", 1, feat, &mut rng)?;
        Ok(Controller {
            config,
            task,
            vocab_width,
            num_reducers,
            num_translators,
            store,
            policy_enc,
            value_enc,
            kind_head,
            reducer_head,
            translator_head,
            window_head,
            value_head,
        })
    }

    /// Rebuild with parameters from a checkpoint holding `controller.*`.
    pub fn from_checkpoint(
        config: ControllerConfig,
        task: Task,
        num_reducers: usize,
        num_translators: usize,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let mut c = Controller::new(config, task, num_reducers, num_translators, 0)?;
        for id in c.store.ids().collect::<Vec<_>>() {
            let name = c.store.name(id).to_string();
            let t = ckpt
                .get(&name)
                .ok_or_else(|| Error::parse("checkpoint", format!("missing {name}")))?;
            if t.shape() != c.store.get(id).shape() {
                return Err(Error::Shape {
                    op: "load controller",
                    shapes: vec![t.shape().to_vec(), c.store.get(id).shape().to_vec()],
                });
            }
            *c.store.get_mut(id) = t.clone();
        }
        Ok(c)
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.add_store(&self.store);
    }

    fn target_width(task: Task) -> usize {
        match task {
            Task::Numerical => 0,
            Task::Multilingual => NUM_LANGUAGES,
        }
    }

    /// Width of one position's input row.
    pub fn input_width(&self) -> usize {
        self.vocab_width + Self::target_width(self.task)
    }

    fn run_encoder(
        &self,
        g: &mut Graph,
        enc: &Encoder,
        inputs: &[NodeId],
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let h = self.config.hidden;
        let h0 = g.constant(Tensor::zeros(&[h]));
        let fwd = gru_sequence(g, &enc.fwd, inputs, h0)?;
        let Some(bwd_params) = &enc.bwd else {
            let summary = *fwd.last().expect("non-empty");
            return Ok((fwd, summary));
        };
        let reversed: Vec<NodeId> = inputs.iter().rev().copied().collect();
        let mut bwd = gru_sequence(g, bwd_params, &reversed, h0)?;
        bwd.reverse();
        let features = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        let summary = g.concat(&[*fwd.last().unwrap(), bwd[0]])?;
        Ok((features, summary))
    }

    /// Per-position features and summaries for `state`. The target language
    /// one-hot is appended to every position's input.
    pub fn encode(
        &self,
        g: &mut Graph,
        state: &TokenSeq,
        target: Option<Language>,
    ) -> Result<Encoded> {
        if state.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot encode an empty state".into(),
            ));
        }
        if state.width() != self.vocab_width {
            return Err(Error::VocabMismatch {
                expected: self.vocab_width,
                found: state.width(),
            });
        }
        let tw = Self::target_width(self.task);
        let inputs: Vec<NodeId> = state
            .rows()
            .map(|row| {
                let mut x = Vec::with_capacity(row.len() + tw);
                x.extend_from_slice(row);
                if tw > 0 {
                    let mut onehot = vec![0.0; tw];
                    if let Some(t) = target {
                        onehot[t.id()] = 1.0;
                    }
                    x.extend(onehot);
                }
                g.constant(Tensor::vector(x))
            })
            .collect();
        let (features, summary) = self.run_encoder(g, &self.policy_enc, &inputs)?;
        let value_summary = match &self.value_enc {
            None => summary,
            Some(enc) => self.run_encoder(g, enc, &inputs)?.1,
        };
        Ok(Encoded {
            features,
            summary,
            value_summary,
        })
    }

    pub fn evaluate_value(&self, g: &mut Graph, enc: &Encoded) -> Result<NodeId> {
        let v = self.value_head.apply(g, enc.value_summary)?;
        g.pick(v, 0)
    }

    /// Encode `state` and build the kind, module and value heads.
    pub fn heads(
        &self,
        g: &mut Graph,
        state: &TokenSeq,
        target: Option<Language>,
        space: &ActionSpace,
    ) -> Result<PolicyHeads> {
        self.check_space(space)?;
        let encoded = self.encode(g, state, target)?;
        let kind_logits = self.kind_head.apply(g, encoded.summary)?;
        let allowed = space
            .kinds
            .iter()
            .map(|k| g.pick(kind_logits, k.head_index()))
            .collect::<Result<Vec<_>>>()?;
        let allowed = g.concat(&allowed)?;
        let kind_logp = g.row_log_softmax(allowed)?;
        let reducer_logits = self.reducer_head.apply(g, encoded.summary)?;
        let reducer_logp = g.row_log_softmax(reducer_logits)?;
        let translator_logp = match &self.translator_head {
            Some(head) if space.kinds.contains(&ActionKind::Translate) => {
                let l = head.apply(g, encoded.summary)?;
                Some(g.row_log_softmax(l)?)
            }
            _ => None,
        };
        let value = self.evaluate_value(g, &encoded)?;
        Ok(PolicyHeads {
            encoded,
            kind_logp,
            reducer_logp,
            translator_logp,
            value,
        })
    }

    /// Log-probabilities over `candidates` (window start positions) for
    /// reducer `reducer`.
    pub fn window_logp(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        reducer: usize,
        candidates: &[usize],
    ) -> Result<NodeId> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("no candidate windows".into()));
        }
        let scores = candidates
            .iter()
            .map(|&w| {
                let f = &enc.features;
                if w + 2 >= f.len() {
                    return Err(Error::InvalidArgument(format!("window {w} out of range")));
                }
                let x = g.concat(&[f[w], f[w + 1], f[w + 2]])?;
                let s = self.window_head.apply(g, x)?;
                g.pick(s, reducer)
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = g.concat(&scores)?;
        g.row_log_softmax(scores)
    }

    fn check_space(&self, space: &ActionSpace) -> Result<()> {
        if space.num_reducers != self.num_reducers || space.num_translators > self.num_translators {
            return Err(Error::InvalidArgument(format!(
                "action space ({} reducers, {} translators) does not match controller ({}, {})",
                space.num_reducers, space.num_translators, self.num_reducers, self.num_translators
            )));
        }
        Ok(())
    }

    /// Choose an action at `state`.
    pub fn sample_action(
        &self,
        state: &TokenSeq,
        target: Option<Language>,
        space: &ActionSpace,
        mode: SelectMode,
        rng: &mut SeededRng,
    ) -> Result<ActionSample> {
        let mut g = Graph::new(&self.store);
        let heads = self.heads(&mut g, state, target, space)?;
        let pick = |logp: &[f64], rng: &mut SeededRng| -> usize {
            match mode {
                SelectMode::Greedy => argmax(logp),
                SelectMode::Sample => {
                    let p: Vec<f64> = logp.iter().map(|x| x.exp()).collect();
                    rng.categorical(&p)
                }
            }
        };
        let kind_lp = g.value(heads.kind_logp).data().to_vec();
        let ki = pick(&kind_lp, rng);
        let mut log_prob = kind_lp[ki];
        let mut entropy = entropy_of(&kind_lp);
        let action = match space.kinds[ki] {
            ActionKind::Halt => Action::Halt,
            ActionKind::Reduce => {
                let lp = g.value(heads.reducer_logp).data().to_vec();
                let r = pick(&lp, rng);
                log_prob += lp[r];
                entropy += entropy_of(&lp);
                let candidates = space.candidate_windows(state);
                let window = if candidates.is_empty() {
                    None
                } else {
                    let wl = self.window_logp(&mut g, &heads.encoded, r, &candidates)?;
                    let wlp = g.value(wl).data().to_vec();
                    let w = pick(&wlp, rng);
                    log_prob += wlp[w];
                    entropy += entropy_of(&wlp);
                    Some(candidates[w])
                };
                Action::Reduce { reducer: r, window }
            }
            ActionKind::Translate => {
                let node = heads
                    .translator_logp
                    .ok_or_else(|| Error::InvalidArgument("no translators".into()))?;
                let lp = g.value(node).data().to_vec();
                let t = pick(&lp, rng);
                log_prob += lp[t];
                entropy += entropy_of(&lp);
                Action::Translate { translator: t }
            }
        };
        Ok(ActionSample {
            action,
            log_prob,
            entropy,
            value: g.value(heads.value).item(),
        })
    }

    /// Graph nodes for `log π(action | state)`, the entropy of the
    /// distributions involved, and the value estimate.
    pub fn action_terms(
        &self,
        g: &mut Graph,
        state: &TokenSeq,
        target: Option<Language>,
        space: &ActionSpace,
        action: &Action,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let heads = self.heads(g, state, target, space)?;
        let ki = space
            .kinds
            .iter()
            .position(|k| *k == action.kind())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("{:?} not in action space", action.kind()))
            })?;
        let mut logps = vec![g.pick(heads.kind_logp, ki)?];
        let mut ents = vec![entropy_node(g, heads.kind_logp)?];
        match *action {
            Action::Halt => {}
            Action::Reduce { reducer, window } => {
                logps.push(g.pick(heads.reducer_logp, reducer)?);
                ents.push(entropy_node(g, heads.reducer_logp)?);
                if let Some(w) = window {
                    let candidates = space.candidate_windows(state);
                    let wi = candidates.iter().position(|&c| c == w).ok_or_else(|| {
                        Error::InvalidArgument(format!("window {w} is not a candidate"))
                    })?;
                    let wl = self.window_logp(g, &heads.encoded, reducer, &candidates)?;
                    logps.push(g.pick(wl, wi)?);
                    ents.push(entropy_node(g, wl)?);
                }
            }
            Action::Translate { translator } => {
                let node = heads
                    .translator_logp
                    .ok_or_else(|| Error::InvalidArgument("no translators".into()))?;
                logps.push(g.pick(node, translator)?);
                ents.push(entropy_node(g, node)?);
            }
        }
        let logp = g.add_all(&logps)?;
        let ent = g.add_all(&ents)?;
        Ok((logp, ent, heads.value))
    }
}

fn entropy_of(logp: &[f64]) -> f64 {
    -logp.iter().map(|&l| l.exp() * l).sum::<f64>()
}

fn entropy_node(g: &mut Graph, logp: NodeId) -> Result<NodeId> {
    let p = g.exp(logp)?;
    let plogp = g.mul(p, logp)?;
    let s = g.sum(plogp)?;
    g.scale(s, -1.0)
}

/// Fixed order of operations for the numerical task: the leftmost `×`
/// window if there is one, otherwise the leftmost operator window; halt on a
/// single token. Anything that does not decode as an alternating
/// digit/operator sequence halts.
pub fn hardcoded_controller_action(state: &TokenSeq) -> Action {
    let ids = state.argmax_ids();
    if ids.len() == 1 {
        return Action::Halt;
    }
    let mut ops = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        match (i % 2, decode_token(id)) {
            (0, Some((_, Symbol::Digit(_)))) => {}
            (1, Some((_, Symbol::Op(op)))) => ops.push((i - 1, op)),
            _ => return Action::Halt,
        }
    }
    if ids.len() % 2 == 0 || ops.is_empty() {
        return Action::Halt;
    }
    let window = ops
        .iter()
        .find(|(_, op)| *op == Operator::Mul)
        .or(ops.first())
        .map(|(w, _)| *w);
    Action::Reduce { reducer: 0, window }
}
