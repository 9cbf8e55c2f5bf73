//! Selective state-space blocks. Selection parameters `Δ, B, C` are
//! projections of a per-step selection input: the sequence itself for the
//! vanilla scan, or the sequence concatenated with egomotion latents for the
//! motion-driven scan.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::nn::{init_layernorm, init_linear, init_projection, layernorm_named, linear};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Initial step size `softplus(b_Δ)`.
const DELTA_INIT: f64 = 0.3;

/// `em_width` is 0 for a vanilla block.
pub fn init_scan_block(
    store: &mut ParamStore,
    prefix: &str,
    f: usize,
    em_width: usize,
    d_state: usize,
    rng: &mut impl Rng,
) {
    let sel = f + em_width;
    init_layernorm(store, &format!("{prefix}.ln"), f);
    init_projection(store, &format!("{prefix}.delta"), sel, f, rng);
    store.insert(
        format!("{prefix}.delta.b"),
        Tensor::full(&[f], DELTA_INIT.exp_m1().ln()),
    );
    init_projection(store, &format!("{prefix}.bsel"), sel, d_state, rng);
    init_projection(store, &format!("{prefix}.csel"), sel, d_state, rng);
    let a_log = (0..f)
        .flat_map(|_| (1..=d_state).map(|n| (n as f64).ln()))
        .collect();
    store.insert(
        format!("{prefix}.a_log"),
        Tensor::new(vec![f, d_state], a_log).expect("a_log shape"),
    );
    store.insert(format!("{prefix}.d"), Tensor::full(&[f], 1.0));
    init_linear(store, &format!("{prefix}.gate"), f, f, rng);
    init_projection(store, &format!("{prefix}.out"), f, f, rng);
}

fn scan_core(g: &mut Graph, store: &ParamStore, prefix: &str, u: Var, sel: Var) -> Result<Var> {
    let delta = linear(g, store, &format!("{prefix}.delta"), sel)?;
    let delta = g.softplus(delta);
    let b = linear(g, store, &format!("{prefix}.bsel"), sel)?;
    let c = linear(g, store, &format!("{prefix}.csel"), sel)?;
    let a_log = g.param(store, &format!("{prefix}.a_log"))?;
    let a = g.exp(a_log);
    let a = g.scale(a, -1.0);
    let d = g.param(store, &format!("{prefix}.d"))?;
    for v in [delta, b, c] {
        if !g.value(v).all_finite() {
            return Err(Error::Validation(format!(
                "{prefix}: non-finite scan parameters"
            )));
        }
    }
    g.selective_scan(u, delta, a, b, c, d)
}

/// Scan of `u` whose selection parameters are projections of `u` itself.
pub fn selective_scan(g: &mut Graph, store: &ParamStore, prefix: &str, u: Var) -> Result<Var> {
    scan_core(g, store, prefix, u, u)
}

/// Scan of `hm` with selection driven by `[hm_t ‖ em_t]`.
pub fn mdss_scan(g: &mut Graph, store: &ParamStore, prefix: &str, hm: Var, em: Var) -> Result<Var> {
    if g.shape(hm)[0] != g.shape(em)[0] {
        return Err(Error::Validation(format!(
            "hm has {} steps but em has {}",
            g.shape(hm)[0],
            g.shape(em)[0]
        )));
    }
    let sel = g.concat_cols(&[hm, em])?;
    scan_core(g, store, prefix, hm, sel)
}

fn gated_residual(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    n: Var,
    y: Var,
) -> Result<Var> {
    let gate = linear(g, store, &format!("{prefix}.gate"), n)?;
    let gate = g.silu(gate);
    let h = g.mul(y, gate)?;
    let h = linear(g, store, &format!("{prefix}.out"), h)?;
    g.add(x, h)
}

/// Vanilla block: `x + W_out((scan(LN x)) ⊙ silu(W_g LN x + b_g))`.
pub fn scan_block(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let n = layernorm_named(g, store, &format!("{prefix}.ln"), x)?;
    let y = selective_scan(g, store, prefix, n)?;
    gated_residual(g, store, prefix, x, n, y)
}

/// Egomotion-aware block: as [`scan_block`] with the motion-driven scan.
pub fn eam_block(g: &mut Graph, store: &ParamStore, prefix: &str, hm: Var, em: Var) -> Result<Var> {
    let n = layernorm_named(g, store, &format!("{prefix}.ln"), hm)?;
    let y = mdss_scan(g, store, prefix, n, em)?;
    gated_residual(g, store, prefix, hm, n, y)
}
