//! Invariants of the environment, the modules and the learning updates.

use crl_core::controller::{
    Action, ActionKind, ActionSpace, Controller, ControllerConfig, SelectMode, WindowRule,
};
use crl_core::mdp::{
    replay, run_episode, BoundedSteps, ControllerPolicy, Effect, Env, HorizonMode, TraceRecord,
};
use crl_core::modules::{ModuleConfig, ModuleSet};
use crl_core::numeric::adam::{AdamConfig, AdamState};
use crl_core::numeric::graph::Graph;
use crl_core::numeric::rng::{SeededRng, Stream};
use crl_core::problem::dataset::{build_numerical_dataset, Split};
use crl_core::problem::expr::{gen_expression, ProblemInstance};
use crl_core::problem::vocab::{Language, Task, TokenSeq, NUM_LANGUAGES};
use crl_core::training::{
    controller_update, ppo_gradients, ppo_steps, recompute_chain, train, LossWeights, ModelKind,
    PpoStep, Quiet, TrainConfig,
};

/// Learned numerical modules, multilingual modules with translators, or
/// exact reducers with operator-centred windows.
#[derive(Clone, Copy, Debug)]
pub enum Setup {
    Numerical,
    Multilingual,
    Exact,
}

pub const SETUPS: [Setup; 3] = [Setup::Numerical, Setup::Multilingual, Setup::Exact];

struct World {
    task: Task,
    modules: ModuleSet,
    controller: Controller,
    space: ActionSpace,
}

fn world(setup: Setup, bounded: bool, seed: u64) -> World {
    let (task, modules, windows) = match setup {
        Setup::Numerical => (Task::Numerical, ModuleConfig::numerical(1), WindowRule::All),
        Setup::Multilingual => (
            Task::Multilingual,
            ModuleConfig::multilingual(),
            WindowRule::All,
        ),
        Setup::Exact => (
            Task::Numerical,
            ModuleConfig::hardcoded(),
            WindowRule::OperatorCentered,
        ),
    };
    let modules = ModuleConfig {
        hidden: 16,
        ..modules
    };
    let ctrl = ControllerConfig {
        hidden: 8,
        ..ControllerConfig::default()
    };
    World {
        task,
        modules: ModuleSet::new(modules, task.vocab_width(), seed).unwrap(),
        controller: Controller::new(ctrl, task, modules.reducers, modules.translators, seed)
            .unwrap(),
        space: ActionSpace::new(
            task,
            !bounded,
            modules.reducers,
            modules.translators,
            windows,
        ),
    }
}

fn problem(task: Task, k: usize, rng: &mut SeededRng) -> ProblemInstance {
    let e = gen_expression(k, rng).unwrap();
    match task {
        Task::Numerical => ProblemInstance::numerical(e),
        Task::Multilingual => {
            let src = Language::new(rng.below(NUM_LANGUAGES)).unwrap();
            let tgt = Language::new(rng.below(NUM_LANGUAGES)).unwrap();
            ProblemInstance::new(e, src, tgt)
        }
    }
}

fn horizon(bounded: bool) -> HorizonMode {
    if bounded {
        HorizonMode::Bounded(BoundedSteps::Reductions { extra: 2 })
    } else {
        HorizonMode::default()
    }
}

fn sampled_episode(w: &World, mode: HorizonMode, k: usize, seed: u64) -> TraceRecord {
    let mut rng = SeededRng::new(seed, Stream::Test, 1);
    let p = problem(w.task, k, &mut rng);
    let policy = ControllerPolicy {
        controller: &w.controller,
        space: w.space.clone(),
        mode: SelectMode::Sample,
    };
    run_episode(&Env::new(&w.modules, mode), &policy, &p, &mut rng).unwrap()
}

fn max_abs_diff(a: &TokenSeq, b: &TokenSeq) -> f64 {
    assert_eq!(a.len(), b.len());
    a.rows()
        .zip(b.rows())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn length_accounting(setup: Setup, bounded: bool, k: usize, seed: u64) {
    let w = world(setup, bounded, seed);
    let trace = sampled_episode(&w, horizon(bounded), k, seed);
    let lens: Vec<usize> = trace
        .steps
        .iter()
        .map(|s| s.state.len())
        .chain([trace.final_state.len()])
        .collect();
    for (i, step) in trace.steps.iter().enumerate() {
        let expected = match step.effect {
            Effect::Reduced { .. } => lens[i] - 2,
            _ => lens[i],
        };
        assert_eq!(lens[i + 1], expected, "step {} {:?}", i, step.effect);
    }
    assert_eq!(lens[0], 2 * k - 1);
    assert_eq!(
        trace.final_state.len(),
        2 * k - 1 - 2 * trace.num_reductions()
    );
}

pub fn return_accounting(setup: Setup, k: usize, seed: u64) {
    let w = world(setup, false, seed);
    let trace = sampled_episode(&w, HorizonMode::default(), k, seed);
    let charged = trace.steps.len() - usize::from(trace.halted_by_policy);
    let expected = trace.terminal_reward - 0.01 * charged as f64;
    assert!((trace.total_return - expected).abs() < 1e-12);
    let summed: f64 = trace.steps.iter().map(|s| s.reward).sum();
    assert!((trace.total_return - summed).abs() < 1e-12);
    assert!(trace.steps.len() <= 2 * (2 * k - 1) + 10);
}

pub fn bounded_budget(setup: Setup, k: usize, seed: u64) {
    let w = world(setup, true, seed);
    let trace = sampled_episode(&w, horizon(true), k, seed);
    assert_eq!(trace.steps.len(), k - 1 + 2);
    assert!(!trace.halted_by_policy);
    assert!(trace.steps.iter().all(|s| s.sample.action != Action::Halt));
    assert_eq!(trace.total_return, trace.terminal_reward);
}

pub fn recompute_fidelity(k: usize, seed: u64) {
    let w = world(Setup::Multilingual, false, seed);
    let trace = sampled_episode(&w, HorizonMode::default(), k, seed);
    let mut g = Graph::new(&w.modules.store);
    let rows = recompute_chain(&mut g, &w.modules, &trace).unwrap();
    let recomputed = TokenSeq::from_rows(
        w.modules.width,
        rows.iter()
            .map(|r| g.value(r.probs).data().to_vec())
            .collect(),
    )
    .unwrap();
    assert!(max_abs_diff(&recomputed, &trace.final_state) <= 1e-9);

    let env = Env::new(&w.modules, HorizonMode::default());
    let states = replay(&env, &trace).unwrap();
    for (replayed, step) in states.iter().zip(&trace.steps) {
        assert!(max_abs_diff(replayed, &step.state) <= 1e-9);
    }
    assert!(max_abs_diff(states.last().unwrap(), &trace.final_state) <= 1e-9);
}

pub fn joint_probabilities(setup: Setup, bounded: bool, k: usize, seed: u64) {
    let w = world(setup, bounded, seed);
    let mut rng = SeededRng::new(seed, Stream::Test, 2);
    let p = problem(w.task, k, &mut rng);
    let env = Env::new(&w.modules, horizon(bounded));
    let state = env.reset(&p).unwrap().seq;
    let target = (w.task == Task::Multilingual).then_some(p.tgt);
    let mut actions = Vec::new();
    for kind in &w.space.kinds {
        match kind {
            ActionKind::Halt => actions.push(Action::Halt),
            ActionKind::Reduce => {
                let windows = w.space.candidate_windows(&state);
                for reducer in 0..w.space.num_reducers {
                    if windows.is_empty() {
                        actions.push(Action::Reduce {
                            reducer,
                            window: None,
                        });
                    }
                    for &win in &windows {
                        actions.push(Action::Reduce {
                            reducer,
                            window: Some(win),
                        });
                    }
                }
            }
            ActionKind::Translate => {
                for translator in 0..w.space.num_translators {
                    actions.push(Action::Translate { translator });
                }
            }
        }
    }
    let mut total = 0.0;
    for a in &actions {
        let mut g = Graph::new(&w.controller.store);
        let (logp, _, _) = w
            .controller
            .action_terms(&mut g, &state, target, &w.space, a)
            .unwrap();
        total += g.value(logp).item().exp();
    }
    assert!((total - 1.0).abs() < 1e-9, "total {}", total);
}

fn on_simplex(row: &[f64]) -> bool {
    row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

fn random_row(width: usize, rng: &mut SeededRng) -> Vec<f64> {
    if rng.below(2) == 0 {
        let mut r = vec![0.0; width];
        r[rng.below(width)] = 1.0;
        return r;
    }
    let scale = rng.uniform_range(0.1, 8.0);
    let z: Vec<f64> = (0..width)
        .map(|_| (rng.uniform_range(-1.0, 1.0) * scale).exp())
        .collect();
    let s: f64 = z.iter().sum();
    z.into_iter().map(|x| x / s).collect()
}

/// Random reducer and translator applications, each output row checked.
pub fn simplex_preserved(applications: usize) {
    let modules = ModuleSet::new(
        ModuleConfig::multilingual(),
        Task::Multilingual.vocab_width(),
        5,
    )
    .unwrap();
    let width = modules.width;
    let mut rng = SeededRng::new(5, Stream::Test, 0);
    let mut pool: Vec<Vec<f64>> = (0..64).map(|_| random_row(width, &mut rng)).collect();
    for i in 0..applications {
        let slot = rng.below(pool.len());
        let out = if rng.below(2) == 0 {
            let w = [rng.below(64), rng.below(64), rng.below(64)];
            let id = rng.below(modules.num_reducers());
            modules
                .reducer_apply(id, [&pool[w[0]], &pool[w[1]], &pool[w[2]]])
                .unwrap()
                .unwrap()
        } else {
            let seq = TokenSeq::from_rows(width, vec![pool[slot].clone()]).unwrap();
            let id = rng.below(modules.num_translators());
            modules.translator_apply(id, &seq).unwrap().row(0).to_vec()
        };
        assert!(
            on_simplex(&out),
            "application {i}: sum {}",
            out.iter().sum::<f64>()
        );
        // keep a mix of fresh inputs and module outputs so chains get deep
        pool[slot] = if rng.below(8) == 0 {
            random_row(width, &mut rng)
        } else {
            out
        };
    }
}

/// `-mean_t A_t log π(a_t | s_t)` for fixed advantages.
fn reinforce_objective(c: &Controller, space: &ActionSpace, steps: &[PpoStep]) -> f64 {
    let mut g = Graph::new(&c.store);
    let mut total = 0.0;
    for s in steps {
        let (logp, _, _) = c
            .action_terms(&mut g, s.state, s.target, space, &s.action)
            .unwrap();
        total += s.advantage * g.value(logp).item();
    }
    -total / steps.len() as f64
}

/// With no clipping, entropy or value terms, one epoch and one minibatch,
/// the update gradient is the REINFORCE-with-baseline gradient. Returns the
/// relative error against central differences.
pub fn degenerate_ppo_matches_reinforce() -> f64 {
    let w = world(Setup::Numerical, false, 11);
    let mut controller = Controller::new(
        ControllerConfig {
            hidden: 3,
            ..ControllerConfig::default()
        },
        Task::Numerical,
        1,
        0,
        11,
    )
    .unwrap();
    let policy = ControllerPolicy {
        controller: &controller,
        space: w.space.clone(),
        mode: SelectMode::Sample,
    };
    let env = Env::new(&w.modules, HorizonMode::default());
    let traces: Vec<TraceRecord> = (0..4)
        .map(|i| {
            let mut rng = SeededRng::new(11, Stream::Test, 10 + i);
            let p = problem(Task::Numerical, 2 + (i as usize % 2), &mut rng);
            run_episode(&env, &policy, &p, &mut rng).unwrap()
        })
        .collect();
    let steps = ppo_steps(&traces, Task::Numerical, false);
    assert!(steps.len() >= 4);
    let batch: Vec<&PpoStep> = steps.iter().collect();
    let weights = LossWeights {
        clip_epsilon: f64::INFINITY,
        value_coef: 0.0,
        entropy_coef: 0.0,
    };
    let (grads, _, _) = ppo_gradients(&controller, &w.space, &batch, weights).unwrap();
    let analytic = grads.flatten(&controller.store);

    let h = 1e-6;
    let mut probe = controller.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let ids: Vec<_> = probe.store.ids().collect();
    for id in ids {
        for i in 0..probe.store.get(id).len() {
            let orig = probe.store.get(id).data()[i];
            probe.store.get_mut(id).data_mut()[i] = orig + h;
            let up = reinforce_objective(&probe, &w.space, &steps);
            probe.store.get_mut(id).data_mut()[i] = orig - h;
            let down = reinforce_objective(&probe, &w.space, &steps);
            probe.store.get_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&numeric);
    assert!(norm(&numeric) > 0.0);
    assert!(rel <= 1e-6, "relative error {rel:.2e}");

    // a full update is one Adam step along that gradient
    let mut cfg = TrainConfig::new(Task::Numerical, ModelKind::Crl);
    cfg.clip_epsilon = f64::INFINITY;
    cfg.value_coef = 0.0;
    cfg.entropy_coef = 0.0;
    cfg.ppo_epochs = 1;
    cfg.minibatch_steps = steps.len();
    cfg.normalize_advantages = false;
    let adam_cfg = AdamConfig::with_lr(1e-3);
    let mut expected = controller.store.clone();
    AdamState::new(&expected, adam_cfg)
        .step(&mut expected, &grads)
        .unwrap();
    let mut adam = AdamState::new(&controller.store, adam_cfg);
    let stats =
        controller_update(&mut controller, &mut adam, &traces, &w.space, &cfg, 11, 0).unwrap();
    assert_eq!(stats.minibatches, 1);
    for ((_, name, got), (_, _, want)) in controller.store.iter().zip(expected.iter()) {
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12, "{name}: {a} vs {b}");
        }
    }
    rel
}

pub fn repeat_run_is_bit_identical() {
    let data = build_numerical_dataset(1, 2..=3, 0).unwrap();
    let mut cfg = TrainConfig::new(Task::Numerical, ModelKind::Crl);
    cfg.episodes = 10_000;
    cfg.eval_every = 2_500;
    cfg.curriculum_cadence = Some(2_500);
    cfg.eval_splits = vec![Split::Train, Split::Test];
    cfg.eval_max_per_group = Some(30);
    cfg.controller.hidden = 16;
    let a = train(&cfg, &data, 3, &mut Quiet).unwrap();
    let b = train(&cfg, &data, 3, &mut Quiet).unwrap();
    assert_eq!(a.episodes, 10_000);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(
        a.learner.to_checkpoint().to_text(),
        b.learner.to_checkpoint().to_text()
    );
    assert_eq!(a.events, b.events);
}

/// Every per-episode invariant over `cases` deterministic draws of setup,
/// horizon, length and seed.
pub fn sweep(cases: u64) {
    let mut rng = SeededRng::new(17, Stream::Test, 3);
    for _ in 0..cases {
        let setup = SETUPS[rng.below(SETUPS.len())];
        let bounded = rng.below(2) == 1;
        let k = 1 + rng.below(6);
        let seed = rng.below(1 << 40) as u64;
        length_accounting(setup, bounded, k, seed);
        return_accounting(setup, k, seed);
        bounded_budget(setup, k, seed);
        recompute_fidelity(k.min(5), seed);
        joint_probabilities(setup, bounded, k, seed);
    }
}
