use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::nn::{init_projection, linear};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Bias-free query/key/value/output projections; keys and values read
/// `kv_width`-wide rows.
pub fn init_attention(
    store: &mut ParamStore,
    prefix: &str,
    f: usize,
    kv_width: usize,
    rng: &mut impl Rng,
) {
    init_projection(store, &format!("{prefix}.q"), f, f, rng);
    init_projection(store, &format!("{prefix}.k"), kv_width, f, rng);
    init_projection(store, &format!("{prefix}.v"), kv_width, f, rng);
    init_projection(store, &format!("{prefix}.o"), f, f, rng);
}

/// Multi-head scaled dot-product attention. Returns the output and each
/// head's `T×K` attention weights.
pub fn attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let q = linear(g, store, &format!("{prefix}.q"), q_in)?;
    let k = linear(g, store, &format!("{prefix}.k"), kv_in)?;
    let v = linear(g, store, &format!("{prefix}.v"), kv_in)?;
    let f = g.shape(q)[1];
    if heads == 0 || !f.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "width {f} is not divisible by {heads} heads"
        )));
    }
    let dh = f / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores)?;
        outs.push(g.matmul(p, vh)?);
        weights.push(p);
    }
    let cat = g.concat_cols(&outs)?;
    Ok((linear(g, store, &format!("{prefix}.o"), cat)?, weights))
}

/// Self-attention over `x + code` (the time code is added to queries, keys and
/// values alike).
pub fn mhsa(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    code: &Tensor,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let c = g.constant(code.clone());
    let xc = g.add(x, c)?;
    attention(g, store, prefix, xc, xc, heads)
}

/// Cross-attention from `q` to `kv`; `kv` rows carry no positional code.
pub fn mhca(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    q: Var,
    kv: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    attention(g, store, prefix, q, kv, heads)
}
