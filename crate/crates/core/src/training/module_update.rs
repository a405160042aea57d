//! Supervised module training through executed chains.

use crate::controller::Action;
use crate::error::{Error, Result};
use crate::mdp::{Effect, TraceRecord};
use crate::modules::{hardcoded_reduce, ModuleSet, Reducer, SoftRow};
use crate::numeric::adam::AdamState;
use crate::numeric::graph::{Graph, NodeId};
use crate::numeric::tensor::Tensor;
use crate::problem::vocab::encode;

/// Re-run the module applications of `trace` on `g` with the current
/// module parameters, starting from the one-hot input.
pub fn recompute_chain(
    g: &mut Graph,
    modules: &ModuleSet,
    trace: &TraceRecord,
) -> Result<Vec<SoftRow>> {
    let input = encode(&trace.problem.input_ids(), modules.width)?;
    let mut rows: Vec<SoftRow> = input
        .rows()
        .map(|r| SoftRow::input(g.constant(Tensor::vector(r.to_vec()))))
        .collect();
    for step in &trace.steps {
        match (step.effect, step.sample.action) {
            (Effect::Reduced { window, .. }, Action::Reduce { reducer, .. }) => {
                let window_rows = [
                    rows[window].probs,
                    rows[window + 1].probs,
                    rows[window + 2].probs,
                ];
                let out = match modules.reducer(reducer)? {
                    Reducer::Learned(p) => modules.reduce_on(g, &p, window_rows)?,
                    Reducer::Hardcoded => {
                        let vals = window_rows.map(|n| g.value(n).data().to_vec());
                        let row = hardcoded_reduce([&vals[0], &vals[1], &vals[2]], modules.width)
                            .ok_or_else(|| {
                            Error::InvalidArgument("recorded reduction is not valid".into())
                        })?;
                        SoftRow::input(g.constant(Tensor::vector(row)))
                    }
                };
                rows.splice(window..window + 3, [out]);
            }
            (Effect::Translated, Action::Translate { translator }) => {
                let p = modules.translator(translator)?;
                rows = rows
                    .iter()
                    .map(|r| modules.translate_on(g, &p, r.probs))
                    .collect::<Result<_>>()?;
            }
            _ => {}
        }
    }
    Ok(rows)
}

/// `-log p(answer)` under the final row, for episodes that ended on a single
/// row produced by a learned module.
pub fn episode_loss(
    g: &mut Graph,
    modules: &ModuleSet,
    trace: &TraceRecord,
) -> Result<Option<NodeId>> {
    if !trace.fully_reduced() {
        return Ok(None);
    }
    let rows = recompute_chain(g, modules, trace)?;
    let Some(logits) = rows[0].logits else {
        return Ok(None);
    };
    let logp = g.row_log_softmax(logits)?;
    Ok(Some(g.nll(logp, trace.problem.answer_id())?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModuleStats {
    pub eligible: usize,
    pub loss: Option<f64>,
    pub skipped_non_finite: bool,
}

/// One Adam step on the mean answer NLL over the eligible episodes of
/// `traces`. Nothing changes when no episode is eligible.
pub fn module_update(
    modules: &mut ModuleSet,
    adam: &mut AdamState,
    traces: &[TraceRecord],
) -> Result<ModuleStats> {
    let mut stats = ModuleStats::default();
    if !modules.has_learned_params() {
        return Ok(stats);
    }
    let grads = {
        let mut g = Graph::new(&modules.store);
        let mut losses = Vec::new();
        for t in traces {
            match episode_loss(&mut g, modules, t) {
                Ok(Some(l)) => losses.push(l),
                Ok(None) => {}
                Err(Error::NonFinite { .. }) => {
                    stats.skipped_non_finite = true;
                    return Ok(stats);
                }
                Err(e) => return Err(e),
            }
        }
        stats.eligible = losses.len();
        if losses.is_empty() {
            return Ok(stats);
        }
        let total = g.add_all(&losses)?;
        let mean = g.scale(total, 1.0 / losses.len() as f64)?;
        stats.loss = Some(g.value(mean).item());
        g.backward(mean)?
    };
    if !grads.all_finite() {
        stats.skipped_non_finite = true;
        return Ok(stats);
    }
    adam.step(&mut modules.store, &grads)?;
    Ok(stats)
}
