use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::chain::{reverse_chain, sample_emf};
use super::schedule::Schedule;
use crate::denoiser::{decode_states, decode_trajectory, emf_denoiser, hmtm_forward, Conditioning};
use crate::encoders::FusionMode;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Graph, Tensor};
use crate::pipeline::{encode, hold_last_row, PreparedClip};

/// RNG of one reverse chain, keyed by the global seed, clip and target.
pub fn chain_rng(seed: u64, clip_id: &str, target: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((target as u64).to_le_bytes());
    h.update(clip_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForecastOptions {
    pub hmf_steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    /// `N_f×dim` canvas waypoints.
    pub trajectory: Tensor,
    /// Contact probability per future frame.
    pub states: Vec<f64>,
    /// `N_f×f` denoised future hand-motion latents.
    pub hm_future: Tensor,
    /// Holistic egomotion latents used as conditioning.
    pub em: Tensor,
}

/// Encoders, one-step egomotion forecast, multi-step hand-motion chain,
/// decoders.
pub fn dual_forecast(
    model: &Model,
    p: &PreparedClip,
    target: usize,
    sc: &Schedule,
    opts: &ForecastOptions,
) -> Result<Forecast> {
    let cfg = &model.config;
    let store = &model.params;
    let (n_p, n_f) = (p.n_p(), p.n_f());
    let mut rng = chain_rng(opts.seed, &p.id, target);

    let mut g = Graph::new();
    let enc = encode(&mut g, store, cfg, p, target, FusionMode::Inference)?;
    let em_past = g.value(enc.em).clone();
    let hm_past = g.value(enc.hm).clone();
    let voxels = enc.voxels.map(|v| g.value(v).clone());
    let task = enc.task.map(|v| g.value(v).clone());

    let em = if cfg.emf {
        sample_emf(
            &em_past,
            n_f,
            sc,
            |z, s| {
                let mut g = Graph::new();
                let zc = g.constant(z.clone());
                let out = emf_denoiser(&mut g, store, zc, s)?;
                Ok(g.value(out).clone())
            },
            &mut rng,
        )?
    } else {
        let v = hold_last_row(&mut g, enc.em, n_f)?;
        g.value(v).clone()
    };

    let hm = reverse_chain(
        &hm_past,
        n_f,
        sc,
        opts.hmf_steps,
        |z, s| {
            let mut g = Graph::new();
            let zc = g.constant(z.clone());
            let cond = Conditioning {
                em: g.constant(em.clone()),
                voxels: voxels.as_ref().map(|v| g.constant(v.clone())),
                task: task.as_ref().map(|t| g.constant(t.clone())),
            };
            let out = hmtm_forward(&mut g, store, cfg, zc, &cond, s)?;
            Ok(g.value(out).clone())
        },
        |_, _| {},
        &mut rng,
    )?;

    let hm_future = hm.slice_rows(n_p, n_p + n_f)?;
    let mut g = Graph::new();
    let h = g.constant(hm_future.clone());
    let traj = decode_trajectory(&mut g, store, cfg, h)?;
    let st = decode_states(&mut g, store, h)?;
    let trajectory = g.value(traj).clone();
    if !trajectory.all_finite() {
        return Err(Error::Runtime(format!(
            "clip {}: non-finite forecast",
            p.id
        )));
    }
    Ok(Forecast {
        trajectory,
        states: g.value(st).data().to_vec(),
        hm_future,
        em,
    })
}
