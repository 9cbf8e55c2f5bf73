//! Step embedding, attention blocks and the two denoisers.

use rand::Rng;

use super::attention::{init_attention, mhca, mhsa};
use super::scan::{eam_block, init_scan_block, scan_block};
use crate::config::{BlockKind, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::nn::{
    init_layernorm, init_linear, init_mlp, layernorm_named, linear, mlp_forward, sinusoid,
    time_code,
};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Learned linear map of the sinusoidal code of step `s`, `1×f`.
pub fn step_embedding(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    s: usize,
    f: usize,
) -> Result<Var> {
    let code = g.constant(Tensor::row_vector(&sinusoid(s as f64, f)));
    linear(g, store, prefix, code)
}

fn add_step(g: &mut Graph, store: &ParamStore, prefix: &str, z: Var, s: usize) -> Result<Var> {
    let f = g.shape(z)[1];
    let e = step_embedding(g, store, prefix, s, f)?;
    g.add_row(z, e)
}

pub fn init_transformer_block(
    store: &mut ParamStore,
    prefix: &str,
    f: usize,
    kv_width: usize,
    rng: &mut impl Rng,
) {
    init_layernorm(store, &format!("{prefix}.ln1"), f);
    init_attention(store, &format!("{prefix}.sa"), f, f, rng);
    init_layernorm(store, &format!("{prefix}.ln2"), f);
    init_attention(store, &format!("{prefix}.ca"), f, kv_width, rng);
    init_layernorm(store, &format!("{prefix}.ln3"), f);
    init_mlp(store, &format!("{prefix}.ff"), &[f, 2 * f, f], rng);
}

/// Zeroes the projections that write into a transformer block's residual
/// stream, turning the block into the identity.
pub fn zero_block_outputs(store: &mut ParamStore, prefix: &str) -> Result<()> {
    for name in [
        format!("{prefix}.sa.o.w"),
        format!("{prefix}.ca.o.w"),
        format!("{prefix}.ff.1.w"),
        format!("{prefix}.ff.1.b"),
    ] {
        let p = store.get_mut(&name)?;
        p.value = Tensor::zeros(p.value.shape());
    }
    Ok(())
}

/// Pre-norm residual block: self-attention with a time code, cross-attention
/// to `kv`, feed-forward.
pub fn transformer_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    kv: Var,
    heads: usize,
) -> Result<Var> {
    let (t, f) = (g.shape(x)[0], g.shape(x)[1]);
    let n1 = layernorm_named(g, store, &format!("{prefix}.ln1"), x)?;
    let (sa, _) = mhsa(
        g,
        store,
        &format!("{prefix}.sa"),
        n1,
        &time_code(t, f),
        heads,
    )?;
    let x1 = g.add(x, sa)?;
    let n2 = layernorm_named(g, store, &format!("{prefix}.ln2"), x1)?;
    let (ca, _) = mhca(g, store, &format!("{prefix}.ca"), n2, kv, heads)?;
    let x2 = g.add(x1, ca)?;
    let n3 = layernorm_named(g, store, &format!("{prefix}.ln3"), x2)?;
    let ff = mlp_forward(g, store, &format!("{prefix}.ff"), 2, n3)?;
    g.add(x2, ff)
}

/// Structure-aware block attending to voxel patches.
pub fn sat_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    hm: Var,
    voxels: Var,
    heads: usize,
) -> Result<Var> {
    if !g.value(voxels).all_finite() {
        return Err(Error::Validation("non-finite voxel patches".into()));
    }
    transformer_block(g, store, prefix, hm, voxels, heads)
}

/// Task-aware block attending to the task embedding tiled over all rows.
pub fn tat_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    hm: Var,
    task: Var,
    heads: usize,
) -> Result<Var> {
    if !g.value(task).all_finite() {
        return Err(Error::Validation("non-finite task embedding".into()));
    }
    let rows = g.shape(hm)[0];
    let tiled = g.repeat_row(task, rows);
    transformer_block(g, store, prefix, hm, tiled, heads)
}

pub fn block_prefix(i: usize, kind: BlockKind) -> String {
    format!("hmf.{i}.{}", kind.tag().to_ascii_lowercase())
}

pub fn init_hmf_block(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    i: usize,
    kind: BlockKind,
    rng: &mut impl Rng,
) {
    let f = cfg.latent_dim;
    let p = block_prefix(i, kind);
    match kind {
        BlockKind::Eam => init_scan_block(store, &p, f, f, cfg.d_state, rng),
        BlockKind::Sat => init_transformer_block(store, &p, f, f, rng),
        BlockKind::Tat => init_transformer_block(store, &p, f, cfg.feature_dim, rng),
    }
}

pub fn init_hmtm(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    init_linear(store, "hmf.step", cfg.latent_dim, cfg.latent_dim, rng);
    for (i, kind) in cfg.pattern.blocks().iter().enumerate() {
        init_hmf_block(store, cfg, i, *kind, rng);
    }
}

pub fn init_emf(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    let f = cfg.latent_dim;
    init_linear(store, "emf.step", f, f, rng);
    for i in 0..2 {
        init_scan_block(store, &format!("emf.{i}"), f, 0, cfg.d_state, rng);
    }
}

/// Context the hand-motion denoiser conditions on.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning {
    /// Holistic egomotion latents, same length as the hand sequence.
    pub em: Var,
    /// `27×f` voxel patches; `None` substitutes a single zero patch.
    pub voxels: Option<Var>,
    /// `1×x` task embedding.
    pub task: Option<Var>,
}

/// Hybrid denoiser: predicts clean hand-motion latents from `z` at step `s`.
pub fn hmtm_forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    z: Var,
    cond: &Conditioning,
    s: usize,
) -> Result<Var> {
    if cfg.pattern.blocks().is_empty() {
        return Err(Error::Config("empty hybrid pattern".into()));
    }
    let mut h = add_step(g, store, "hmf.step", z, s)?;
    for (i, kind) in cfg.pattern.blocks().iter().enumerate() {
        let p = block_prefix(i, *kind);
        h = match kind {
            BlockKind::Eam => eam_block(g, store, &p, h, cond.em)?,
            BlockKind::Sat => {
                let kv = match cond.voxels {
                    Some(v) => v,
                    None => g.constant(Tensor::zeros(&[1, cfg.latent_dim])),
                };
                sat_block(g, store, &p, h, kv, cfg.heads)?
            }
            BlockKind::Tat => {
                let task = cond.task.ok_or_else(|| {
                    Error::Config("pattern contains TAT but no task embedding was supplied".into())
                })?;
                tat_block(g, store, &p, h, task, cfg.heads)?
            }
        };
    }
    Ok(h)
}

/// Egomotion denoiser: step embedding and two vanilla scan blocks.
pub fn emf_denoiser(g: &mut Graph, store: &ParamStore, z: Var, s: usize) -> Result<Var> {
    let h = add_step(g, store, "emf.step", z, s)?;
    let h = scan_block(g, store, "emf.0", h)?;
    scan_block(g, store, "emf.1", h)
}
