use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::nn::{init_mlp, mlp_forward};
use crate::numerics::{Graph, ParamStore, Var};

pub fn init_decoders(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    let f = cfg.latent_dim;
    init_mlp(store, "dec.traj", &[f, f, cfg.mode.width()], rng);
    init_mlp(store, "dec.int", &[f, f, 1], rng);
}

/// Canvas waypoints, one row per latent row.
pub fn decode_trajectory(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    hm: Var,
) -> Result<Var> {
    let out = mlp_forward(g, store, "dec.traj", 2, hm)?;
    if g.shape(out)[1] != cfg.mode.width() {
        return Err(Error::Config(format!(
            "trajectory decoder emits width {}, mode {:?} needs {}",
            g.shape(out)[1],
            cfg.mode,
            cfg.mode.width()
        )));
    }
    Ok(out)
}

/// Contact probabilities, `rows×1`.
pub fn decode_states(g: &mut Graph, store: &ParamStore, hm: Var) -> Result<Var> {
    let logits = mlp_forward(g, store, "dec.int", 2, hm)?;
    Ok(g.sigmoid(logits))
}
