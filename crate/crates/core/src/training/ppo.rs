//! Clipped-surrogate policy optimization for the controller.

use crate::controller::{Action, ActionSpace, Controller};
use crate::error::{Error, Result};
use crate::mdp::TraceRecord;
use crate::numeric::adam::AdamState;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::params::Grads;
use crate::numeric::rng::{SeededRng, Stream};
use crate::numeric::tensor::Tensor;
use crate::problem::vocab::{Language, Task, TokenSeq};

use super::config::TrainConfig;

/// One decision from a rollout, with everything the update needs.
#[derive(Clone, Debug)]
pub struct PpoStep<'a> {
    pub state: &'a TokenSeq,
    pub target: Option<Language>,
    pub action: Action,
    pub old_log_prob: f64,
    pub old_value: f64,
    /// Undiscounted return from this step to the end of the episode.
    pub ret: f64,
    pub advantage: f64,
}

pub fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc += r;
        out[i] = acc;
    }
    out
}

pub fn ppo_steps(traces: &[TraceRecord], task: Task, normalize: bool) -> Vec<PpoStep<'_>> {
    let mut steps = Vec::new();
    for t in traces {
        let rewards: Vec<f64> = t.steps.iter().map(|s| s.reward).collect();
        let target = match task {
            Task::Multilingual => Some(t.problem.tgt),
            Task::Numerical => None,
        };
        for (s, ret) in t.steps.iter().zip(returns_to_go(&rewards)) {
            steps.push(PpoStep {
                state: &s.state,
                target,
                action: s.sample.action,
                old_log_prob: s.sample.log_prob,
                old_value: s.sample.value,
                ret,
                advantage: ret - s.sample.value,
            });
        }
    }
    if normalize && steps.len() > 1 {
        let n = steps.len() as f64;
        let mean = steps.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = steps
            .iter()
            .map(|s| (s.advantage - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt().max(1e-8);
        for s in &mut steps {
            s.advantage = (s.advantage - mean) / sd;
        }
    }
    steps
}

/// `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        LossWeights {
            clip_epsilon: c.clip_epsilon,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

/// Minibatch loss: negated mean clipped surrogate, plus weighted value
/// error, minus weighted entropy.
pub fn ppo_loss(
    g: &mut Graph,
    controller: &Controller,
    space: &ActionSpace,
    batch: &[&PpoStep],
    w: LossWeights,
) -> Result<(NodeId, LossParts)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let n = batch.len() as f64;
    let (lo, hi) = (1.0 - w.clip_epsilon, 1.0 + w.clip_epsilon);
    let mut terms = Vec::with_capacity(batch.len());
    let mut parts = LossParts::default();
    for s in batch {
        let (logp, ent, value) = controller.action_terms(g, s.state, s.target, space, &s.action)?;
        let old = g.constant(Tensor::scalar(s.old_log_prob));
        let diff = g.sub(logp, old)?;
        let ratio = g.exp(diff)?;
        let unclipped = g.scale(ratio, s.advantage)?;
        let clipped = g.clamp(ratio, lo, hi)?;
        let clipped = g.scale(clipped, s.advantage)?;
        let surrogate = g.minimum(unclipped, clipped)?;
        let ret = g.constant(Tensor::scalar(s.ret));
        let err = g.sub(value, ret)?;
        let sq = g.mul(err, err)?;

        let policy_term = g.scale(surrogate, -1.0 / n)?;
        let value_term = g.scale(sq, w.value_coef / n)?;
        let entropy_term = g.scale(ent, -w.entropy_coef / n)?;
        terms.extend([policy_term, value_term, entropy_term]);

        let r = g.value(ratio).item();
        parts.policy -= g.value(surrogate).item() / n;
        parts.value += g.value(sq).item() / n;
        parts.entropy += g.value(ent).item() / n;
        parts.approx_kl += (s.old_log_prob - g.value(logp).item()) / n;
        if r < lo || r > hi {
            parts.clip_fraction += 1.0 / n;
        }
    }
    Ok((g.add_all(&terms)?, parts))
}

/// Gradient of the minibatch loss with respect to the controller parameters.
pub fn ppo_gradients(
    controller: &Controller,
    space: &ActionSpace,
    batch: &[&PpoStep],
    w: LossWeights,
) -> Result<(Grads, f64, LossParts)> {
    let mut g = Graph::new(&controller.store);
    let (loss, parts) = ppo_loss(&mut g, controller, space, batch, w)?;
    let grads = g.backward(loss)?;
    Ok((grads, g.value(loss).item(), parts))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub steps: usize,
    pub minibatches: usize,
    pub mean_loss: f64,
    pub last: LossParts,
    /// A non-finite loss or gradient was met and the update was discarded.
    pub aborted: bool,
}

/// Several epochs of shuffled minibatch updates over every decision in
/// `traces`. On a non-finite loss the controller and optimizer are restored
/// to their state before the call.
pub fn controller_update(
    controller: &mut Controller,
    adam: &mut AdamState,
    traces: &[TraceRecord],
    space: &ActionSpace,
    cfg: &TrainConfig,
    seed: u64,
    update_index: u64,
) -> Result<PpoStats> {
    let steps = ppo_steps(traces, cfg.task, cfg.normalize_advantages);
    let mut stats = PpoStats {
        steps: steps.len(),
        ..Default::default()
    };
    if steps.is_empty() {
        return Ok(stats);
    }
    let saved = (controller.store.clone(), adam.clone());
    let mut rng = SeededRng::new(seed, Stream::Minibatch, update_index);
    let mut order: Vec<usize> = (0..steps.len()).collect();
    let mut total_loss = 0.0;
    for _ in 0..cfg.ppo_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.minibatch_steps) {
            let batch: Vec<&PpoStep> = chunk.iter().map(|&i| &steps[i]).collect();
            let outcome = ppo_gradients(controller, space, &batch, cfg.into());
            let (mut grads, loss, parts) = match outcome {
                Ok(v) if v.0.all_finite() && v.1.is_finite() => v,
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    controller.store = saved.0;
                    *adam = saved.1;
                    stats.aborted = true;
                    return Ok(stats);
                }
                Err(e) => return Err(e),
            };
            if let Some(max) = cfg.max_grad_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.step(&mut controller.store, &grads)?;
            total_loss += loss;
            stats.minibatches += 1;
            stats.last = parts;
        }
    }
    if !controller.store.iter().all(|(_, _, t)| t.all_finite()) {
        controller.store = saved.0;
        *adam = saved.1;
        stats.aborted = true;
        return Ok(stats);
    }
    stats.mean_loss = total_loss / stats.minibatches as f64;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rule() {
        assert!((clipped_surrogate(1.5, 2.0, 0.2) - 2.4).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.0, 3.0, 0.2), 3.0);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - -0.8).abs() < 1e-12);
        assert!((clipped_surrogate(1.5, -1.0, 0.2) - -1.5).abs() < 1e-12);
    }

    #[test]
    fn three_step_correct_episode() {
        let g = returns_to_go(&[-0.01, -0.01, 1.0]);
        assert!((g[0] - 0.98).abs() < 1e-12);
        let g = returns_to_go(&[-0.01, -0.01, -0.01, 1.0]);
        assert!((g[0] - 0.97).abs() < 1e-12);
        assert!((g[3] - 1.0).abs() < 1e-12);
    }
}
