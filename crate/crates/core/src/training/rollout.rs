use crate::error::Result;
use crate::mdp::{run_episode, Env, Policy, TraceRecord};
use crate::numeric::rng::{SeededRng, Stream};
use crate::problem::expr::ProblemInstance;

/// Episodes collected since the last controller update.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub traces: Vec<TraceRecord>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.traces.iter().map(|t| t.steps.len()).sum()
    }

    pub fn clear(&mut self) {
        self.traces.clear();
    }

    pub fn extend(&mut self, traces: impl IntoIterator<Item = TraceRecord>) {
        self.traces.extend(traces);
    }
}

/// Run one episode with the generator reserved for global episode `index`.
pub fn rollout_episode(
    env: &Env,
    policy: &dyn Policy,
    pool: &[ProblemInstance],
    seed: u64,
    index: u64,
) -> Result<TraceRecord> {
    let mut rng = SeededRng::new(seed, Stream::Rollout, index);
    let problem = &pool[rng.below(pool.len())];
    run_episode(env, policy, problem, &mut rng)
}

/// Episodes `first .. first + n`, each drawn from `pool`. Work is split into
/// contiguous index ranges across `workers` threads; each result lands in
/// the slot of its episode index, so the output does not depend on
/// scheduling.
pub fn collect_rollouts(
    env: &Env,
    policy: &(dyn Policy + Sync),
    pool: &[ProblemInstance],
    seed: u64,
    first: u64,
    n: usize,
    workers: usize,
) -> Result<Vec<TraceRecord>> {
    if workers <= 1 || n < 2 {
        return (0..n as u64)
            .map(|i| rollout_episode(env, policy, pool, seed, first + i))
            .collect();
    }
    let chunk = n.div_ceil(workers);
    let mut slots: Vec<Option<Result<TraceRecord>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, part) in slots.chunks_mut(chunk).enumerate() {
            let start = first + (w * chunk) as u64;
            scope.spawn(move || {
                for (i, slot) in part.iter_mut().enumerate() {
                    *slot = Some(rollout_episode(env, policy, pool, seed, start + i as u64));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect()
}
