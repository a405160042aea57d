use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::init::{init_params, Init};
use super::params::{ParamId, ParamStore};
use super::rng::SeededRng;

/// Gated recurrent unit weights, gates stacked in (update, reset, candidate)
/// order: `w_x` is `[3H, I]`, `u_zr` is `[2H, H]`, `u_h` is `[H, H]`,
/// `bias` is `[3H]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub w_x: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let w_x = store.add(
            format!("{prefix}.w_x"),
            init_params(&[3 * hidden, input], Init::UniformXavier, rng),
        )?;
        let u_zr = store.add(
            format!("{prefix}.u_zr"),
            init_params(&[2 * hidden, hidden], Init::UniformXavier, rng),
        )?;
        let u_h = store.add(
            format!("{prefix}.u_h"),
            init_params(&[hidden, hidden], Init::UniformXavier, rng),
        )?;
        let bias = store.add(
            format!("{prefix}.bias"),
            init_params(&[3 * hidden], Init::Zeros, rng),
        )?;
        Ok(GruParams {
            w_x,
            u_zr,
            u_h,
            bias,
            input,
            hidden,
        })
    }

    /// Look parameters up by name in a loaded store.
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id_of(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::parse("checkpoint", format!("missing {prefix}.{suffix}")))
        };
        let (w_x, u_zr, u_h, bias) = (get("w_x")?, get("u_zr")?, get("u_h")?, get("bias")?);
        let hidden = store.get(u_h).rows();
        let input = store.get(w_x).cols();
        Ok(GruParams {
            w_x,
            u_zr,
            u_h,
            bias,
            input,
            hidden,
        })
    }
}

/// One recurrent update:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W x + U (r ⊙ h) + b)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell(g: &mut Graph, p: &GruParams, x: NodeId, h: NodeId) -> Result<NodeId> {
    if g.shape(x) != [p.input] || g.shape(h) != [p.hidden] {
        return Err(Error::Shape {
            op: "gru_cell",
            shapes: vec![
                g.shape(x).to_vec(),
                g.shape(h).to_vec(),
                vec![p.input, p.hidden],
            ],
        });
    }
    let hd = p.hidden;
    let w_x = g.param(p.w_x);
    let u_zr = g.param(p.u_zr);
    let u_h = g.param(p.u_h);
    let bias = g.param(p.bias);

    let gx = g.matmul(w_x, x)?;
    let gx = g.add(gx, bias)?;
    let gh = g.matmul(u_zr, h)?;

    let xz = g.slice(gx, 0, hd)?;
    let hz = g.slice(gh, 0, hd)?;
    let z = g.add(xz, hz)?;
    let z = g.logistic(z)?;

    let xr = g.slice(gx, hd, hd)?;
    let hr = g.slice(gh, hd, hd)?;
    let r = g.add(xr, hr)?;
    let r = g.logistic(r)?;

    let rh = g.mul(r, h)?;
    let uh = g.matmul(u_h, rh)?;
    let xc = g.slice(gx, 2 * hd, hd)?;
    let cand = g.add(xc, uh)?;
    let cand = g.tanh(cand)?;

    // (1 - z) h + z h̃ == h + z (h̃ - h)
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// Run the cell over a sequence, returning every hidden state in order.
pub fn gru_sequence(
    g: &mut Graph,
    p: &GruParams,
    inputs: &[NodeId],
    h0: NodeId,
) -> Result<Vec<NodeId>> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut h = h0;
    for &x in inputs {
        h = gru_cell(g, p, x, h)?;
        states.push(h);
    }
    Ok(states)
}
