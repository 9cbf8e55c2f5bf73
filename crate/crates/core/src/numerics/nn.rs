//! Layer helpers. Parameters live in a [`ParamStore`] under dotted names; the
//! functions here register them (`init_*`) and replay them onto a [`Graph`].

use rand::Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

pub const LAYERNORM_EPS: f64 = 1e-5;

pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    store.init_uniform(format!("{prefix}.w"), &[fan_in, fan_out], fan_in, rng);
    store.init_uniform(format!("{prefix}.b"), &[fan_out], fan_in, rng);
}

/// Bias-free projection.
pub fn init_projection(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    store.init_uniform(format!("{prefix}.w"), &[fan_in, fan_out], fan_in, rng);
}

pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let y = g.matmul(x, w)?;
    let bname = format!("{prefix}.b");
    if store.contains(&bname) {
        let b = g.param(store, &bname)?;
        g.add_row(y, b)
    } else {
        Ok(y)
    }
}

/// Widths of a multilayer perceptron, input first.
pub fn init_mlp(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut impl Rng) {
    for (i, w) in widths.windows(2).enumerate() {
        init_linear(store, &format!("{prefix}.{i}"), w[0], w[1], rng);
    }
}

/// Affine layers with SiLU between them (none after the last).
pub fn mlp_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        h = linear(g, store, &format!("{prefix}.{i}"), h)?;
        if i + 1 < layers {
            h = g.silu(h);
        }
    }
    Ok(h)
}

pub fn init_layernorm(store: &mut ParamStore, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::full(&[width], 1.0));
    store.init_zeros(format!("{prefix}.bias"), &[width]);
}

pub fn layernorm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = g.normalize_rows(x, LAYERNORM_EPS)?;
    let s = g.mul_row(n, gain)?;
    g.add_row(s, bias)
}

pub fn layernorm_named(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(store, &format!("{prefix}.gain"))?;
    let bias = g.param(store, &format!("{prefix}.bias"))?;
    layernorm(g, x, gain, bias)
}

/// Sinusoidal code of a scalar position, `width` values:
/// `[sin(p w_0), cos(p w_0), sin(p w_1), ...]` with `w_i = 10000^(-2i/width)`.
pub fn sinusoid(position: f64, width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| {
            let freq = 10000f64.powf(-((2 * (j / 2)) as f64) / width as f64);
            if j % 2 == 0 {
                (position * freq).sin()
            } else {
                (position * freq).cos()
            }
        })
        .collect()
}

/// `rows×width` matrix whose row `t` is `sinusoid(t)`.
pub fn time_code(rows: usize, width: usize) -> Tensor {
    let data = (0..rows).flat_map(|t| sinusoid(t as f64, width)).collect();
    Tensor::matrix(rows, width, data).expect("time code shape")
}
