//! Central-difference checks of every differentiable primitive and the GRU
//! cell, over 100 random instances each.

use crl_core::numeric::graph::{Graph, NodeId};
use crl_core::numeric::gru::{gru_cell, GruParams};
use crl_core::numeric::params::{Grads, ParamId, ParamStore};
use crl_core::numeric::rng::{SeededRng, Stream};
use crl_core::numeric::tensor::Tensor;
use crl_core::Result;

const H: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
const INSTANCES: u64 = 100;

/// Error relative to the larger magnitude, with a floor so that gradients of
/// essentially zero are compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn random_tensor(shape: &[usize], rng: &mut SeededRng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform_range(lo, hi)).collect(),
    )
    .unwrap()
}

/// Pushes values at least `gap` away from every point in `kinks`.
fn avoid(mut x: f64, kinks: &[f64], gap: f64) -> f64 {
    for &k in kinks {
        if (x - k).abs() < gap {
            x = k + gap.copysign(x - k + f64::EPSILON);
        }
    }
    x
}

type Build = dyn Fn(&mut Graph, &[NodeId], &[ParamId]) -> Result<NodeId>;

/// Loss = Σ out ⊙ w for a fixed random `w`, so every output element
/// contributes with its own weight.
fn loss_of(
    store: &ParamStore,
    ids: &[ParamId],
    weights: &Tensor,
    build: &Build,
) -> Result<(f64, Grads)> {
    let mut g = Graph::new(store);
    let inputs: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
    let out = build(&mut g, &inputs, ids)?;
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    Ok((g.value(loss).item(), g.backward(loss)?))
}

fn output_shape(store: &ParamStore, ids: &[ParamId], build: &Build) -> Vec<usize> {
    let mut g = Graph::new(store);
    let inputs: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
    let out = build(&mut g, &inputs, ids).unwrap();
    g.shape(out).to_vec()
}

/// Compare analytic gradients of every input entry with central differences.
fn check(
    name: &str,
    store: &mut ParamStore,
    ids: &[ParamId],
    build: &Build,
    rng: &mut SeededRng,
) -> f64 {
    let shape = output_shape(store, ids, build);
    let weights = if shape.is_empty() {
        Tensor::scalar(rng.uniform_range(0.5, 1.5))
    } else {
        random_tensor(&shape, rng, -1.0, 1.0)
    };
    let (_, grads) = loss_of(store, ids, &weights, build).unwrap();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = grads.get(id).map(|t| t.data().to_vec());
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + H;
            let (up, _) = loss_of(store, ids, &weights, build).unwrap();
            store.get_mut(id).data_mut()[i] = orig - H;
            let (down, _) = loss_of(store, ids, &weights, build).unwrap();
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            let e = rel_err(a, numeric);
            assert!(
                e <= TOLERANCE,
                "{name}: input {} entry {i}: analytic {a} numeric {numeric} (rel {e:.2e})",
                store.name(id)
            );
            worst = worst.max(e);
        }
    }
    worst
}

/// Run `INSTANCES` checks of one primitive. `inputs` draws the input tensors
/// of an instance and `build` makes the function under test from them.
fn suite(
    name: &str,
    inputs: impl Fn(&mut SeededRng) -> Vec<Tensor>,
    build: impl Fn(&[Tensor]) -> Box<Build>,
) {
    let mut worst: f64 = 0.0;
    for k in 0..INSTANCES {
        let mut rng = SeededRng::new(name.len() as u64, Stream::Test, k);
        let tensors = inputs(&mut rng);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("{name}.in{i}"), t.clone()).unwrap())
            .collect();
        let f = build(&tensors);
        worst = worst.max(check(name, &mut store, &ids, f.as_ref(), &mut rng));
    }
    eprintln!("{name}: worst relative error {worst:.2e} over {INSTANCES} instances");
}

fn dims(rng: &mut SeededRng) -> (usize, usize, usize) {
    (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4))
}

pub fn matmul_matrix_vector() {
    suite(
        "matmul_mv",
        |rng| {
            let (m, k, _) = dims(rng);
            vec![
                random_tensor(&[m, k], rng, -1.0, 1.0),
                random_tensor(&[k], rng, -1.0, 1.0),
            ]
        },
        |_| Box::new(|g, x, _| g.matmul(x[0], x[1])),
    );
}

pub fn matmul_matrix_matrix() {
    suite(
        "matmul_mm",
        |rng| {
            let (m, k, n) = dims(rng);
            vec![
                random_tensor(&[m, k], rng, -1.0, 1.0),
                random_tensor(&[k, n], rng, -1.0, 1.0),
            ]
        },
        |_| Box::new(|g, x, _| g.matmul(x[0], x[1])),
    );
}

fn pair(rng: &mut SeededRng) -> Vec<Tensor> {
    let n = 1 + rng.below(6);
    vec![
        random_tensor(&[n], rng, -2.0, 2.0),
        random_tensor(&[n], rng, -2.0, 2.0),
    ]
}

pub fn add_sub_mul() {
    suite("add", pair, |_| Box::new(|g, x, _| g.add(x[0], x[1])));
    suite("sub", pair, |_| Box::new(|g, x, _| g.sub(x[0], x[1])));
    suite("mul", pair, |_| Box::new(|g, x, _| g.mul(x[0], x[1])));
}

pub fn minimum_away_from_ties() {
    suite(
        "minimum",
        |rng| {
            let mut t = pair(rng);
            let b: Vec<f64> = t[0]
                .data()
                .iter()
                .zip(t[1].data())
                .map(|(&a, &b)| avoid(b, &[a], 1e-3))
                .collect();
            t[1] = Tensor::vector(b);
            t
        },
        |_| Box::new(|g, x, _| g.minimum(x[0], x[1])),
    );
}

fn single(rng: &mut SeededRng) -> Vec<Tensor> {
    let n = 1 + rng.below(6);
    vec![random_tensor(&[n], rng, -2.0, 2.0)]
}

pub fn scale_and_sum() {
    suite("scale", single, |_| Box::new(|g, x, _| g.scale(x[0], -1.7)));
    suite("sum", single, |_| Box::new(|g, x, _| g.sum(x[0])));
    suite(
        "add_all",
        |rng| {
            let mut t = pair(rng);
            t.extend(single_like(&t[0], rng));
            t
        },
        |_| Box::new(|g, x, _| g.add_all(x)),
    );
}

fn single_like(t: &Tensor, rng: &mut SeededRng) -> Vec<Tensor> {
    vec![random_tensor(t.shape(), rng, -2.0, 2.0)]
}

pub fn concat_slice_pick() {
    suite(
        "concat",
        |rng| {
            let a = 1 + rng.below(4);
            let b = 1 + rng.below(4);
            vec![
                random_tensor(&[a], rng, -1.0, 1.0),
                random_tensor(&[b], rng, -1.0, 1.0),
            ]
        },
        |_| Box::new(|g, x, _| g.concat(x)),
    );
    suite(
        "slice",
        |rng| {
            let n = 2 + rng.below(6);
            vec![random_tensor(&[n], rng, -1.0, 1.0)]
        },
        |t| {
            let n = t[0].len();
            let (start, len) = (n / 3, n - n / 3 - usize::from(n > 2));
            Box::new(move |g, x, _| g.slice(x[0], start, len))
        },
    );
    suite(
        "pick",
        |rng| {
            let n = 1 + rng.below(6);
            vec![random_tensor(&[n], rng, -1.0, 1.0)]
        },
        |t| {
            let i = t[0].len() / 2;
            Box::new(move |g, x, _| g.pick(x[0], i))
        },
    );
}

pub fn elementwise_nonlinearities() {
    suite(
        "relu",
        |rng| {
            let t = single(rng);
            vec![Tensor::vector(
                t[0].data()
                    .iter()
                    .map(|&x| avoid(x, &[0.0], 1e-3))
                    .collect(),
            )]
        },
        |_| Box::new(|g, x, _| g.relu(x[0])),
    );
    suite("tanh", single, |_| Box::new(|g, x, _| g.tanh(x[0])));
    suite("logistic", single, |_| Box::new(|g, x, _| g.logistic(x[0])));
    suite("exp", single, |_| Box::new(|g, x, _| g.exp(x[0])));
    suite(
        "clamp",
        |rng| {
            let t = single(rng);
            vec![Tensor::vector(
                t[0].data()
                    .iter()
                    .map(|&x| avoid(x, &[-0.5, 0.8], 1e-3))
                    .collect(),
            )]
        },
        |_| Box::new(|g, x, _| g.clamp(x[0], -0.5, 0.8)),
    );
    suite("clamp_unbounded", single, |_| {
        Box::new(|g, x, _| g.clamp(x[0], f64::NEG_INFINITY, f64::INFINITY))
    });
}

pub fn softmax_family_and_nll() {
    suite("row_softmax_vec", single, |_| {
        Box::new(|g, x, _| g.row_softmax(x[0]))
    });
    suite(
        "row_softmax_mat",
        |rng| {
            let (r, c, _) = dims(rng);
            vec![random_tensor(&[r, c + 1], rng, -3.0, 3.0)]
        },
        |_| Box::new(|g, x, _| g.row_softmax(x[0])),
    );
    suite("row_log_softmax_vec", single, |_| {
        Box::new(|g, x, _| g.row_log_softmax(x[0]))
    });
    suite(
        "row_log_softmax_mat",
        |rng| {
            let (r, c, _) = dims(rng);
            vec![random_tensor(&[r, c + 1], rng, -3.0, 3.0)]
        },
        |_| Box::new(|g, x, _| g.row_log_softmax(x[0])),
    );
    suite("nll", single, |t| {
        let target = t[0].len() - 1;
        Box::new(move |g, x, _| {
            let lp = g.row_log_softmax(x[0])?;
            g.nll(lp, target)
        })
    });
}

pub fn gru_cell_all_weights_and_inputs() {
    suite(
        "gru_cell",
        |rng| {
            let input = 1 + rng.below(4);
            let hidden = 1 + rng.below(4);
            vec![
                random_tensor(&[3 * hidden, input], rng, -1.0, 1.0),
                random_tensor(&[2 * hidden, hidden], rng, -1.0, 1.0),
                random_tensor(&[hidden, hidden], rng, -1.0, 1.0),
                random_tensor(&[3 * hidden], rng, -0.5, 0.5),
                random_tensor(&[input], rng, -1.0, 1.0),
                random_tensor(&[hidden], rng, -1.0, 1.0),
            ]
        },
        |t| {
            let (hidden, input) = (t[2].rows(), t[0].cols());
            Box::new(move |g, x, ids| {
                let p = GruParams {
                    w_x: ids[0],
                    u_zr: ids[1],
                    u_h: ids[2],
                    bias: ids[3],
                    input,
                    hidden,
                };
                gru_cell(g, &p, x[4], x[5])
            })
        },
    );
}

/// Every primitive and the GRU cell.
pub fn all() {
    matmul_matrix_vector();
    matmul_matrix_matrix();
    add_sub_mul();
    minimum_away_from_ties();
    scale_and_sum();
    concat_slice_pick();
    elementwise_nonlinearities();
    softmax_family_and_nll();
    gru_cell_all_weights_and_inputs();
}
