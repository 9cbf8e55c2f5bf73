use rand::Rng;

use super::losses::{loss_angle, loss_dis, loss_int, loss_reg, loss_total, sum_squares, LossParts};
use crate::config::LossWeights;
use crate::denoiser::{decode_states, decode_trajectory, emf_denoiser, hmtm_forward, Conditioning};
use crate::diffusion::chain::normal_tensor;
use crate::diffusion::{q_sample_var, Schedule};
use crate::encoders::FusionMode;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::pipeline::{encode, hold_last_row, PreparedClip};

/// Scalar training loss of one sample and the value of each term.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub loss: Var,
    pub parts: LossParts,
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).data()[0]
}

/// Builds the weighted loss for `target` of clip `p` on `g`.
///
/// Each branch draws its own step `s ~ U{1..S}` and forward-noises the
/// future rows of its ground-truth latents. The per-step reconstruction term
/// is the one-sample estimate of the sum over steps. The egomotion forecast
/// used for conditioning and for the final-prediction term is the denoiser's
/// output at `S`, mirroring the single inference step; the hand branch's
/// final prediction is its output at the sampled step. Terms with zero weight
/// are not built.
///
/// The future latent targets of both reconstruction terms carry no gradient:
/// the encoders learn only from the trajectory, interaction and downstream
/// terms, which keeps the squared latent error from shrinking the latents
/// toward a constant. They are encoded with `target_params` when given (a
/// gradient check holds them at the base point) and otherwise with the
/// model's own parameters.
#[allow(clippy::too_many_arguments)]
pub fn sample_objective(
    g: &mut Graph,
    model: &Model,
    p: &PreparedClip,
    target: usize,
    sc: &Schedule,
    w: &LossWeights,
    rng: &mut impl Rng,
    target_params: Option<&ParamStore>,
) -> Result<Objective> {
    let cfg = &model.config;
    let store = &model.params;
    let (n_p, n_f) = (p.n_p(), p.n_f());
    let (t, f, big_s) = (n_p + n_f, cfg.latent_dim, sc.steps);
    let mode = FusionMode::Training { n_f };
    let enc = encode(g, store, cfg, p, target, mode)?;
    let (em_target, hm_target) = {
        let mut tg = Graph::new();
        let e = encode(
            &mut tg,
            target_params.unwrap_or(store),
            cfg,
            p,
            target,
            mode,
        )?;
        (
            g.constant(tg.value(e.em).slice_rows(n_p, t)?),
            g.constant(tg.value(e.hm).slice_rows(n_p, t)?),
        )
    };
    let mut parts = LossParts::default();
    let mut terms: Vec<(f64, Var)> = Vec::new();

    let em_past = g.slice_rows(enc.em, 0, n_p)?;
    let em_hol = if cfg.emf {
        let per_step = if w.vlb_em > 0.0 {
            let s = rng.gen_range(1..=big_s);
            let noise = normal_tensor(n_f, f, rng);
            let zs = q_sample_var(g, enc.em, n_p, s, &noise, sc)?;
            let pred = emf_denoiser(g, store, zs, s)?;
            let pf = g.slice_rows(pred, n_p, t)?;
            Some(sum_squares(g, pf, em_target)?)
        } else {
            None
        };
        let noise = normal_tensor(n_f, f, rng);
        let z_big = q_sample_var(g, enc.em, n_p, big_s, &noise, sc)?;
        let pred = emf_denoiser(g, store, z_big, big_s)?;
        let em_hat = g.slice_rows(pred, n_p, t)?;
        if let Some(per_step) = per_step {
            let fin = sum_squares(g, em_hat, em_target)?;
            let vlb = g.add(per_step, fin)?;
            parts.vlb_em = scalar(g, vlb);
            terms.push((w.vlb_em, vlb));
        }
        g.concat_rows(&[em_past, em_hat])?
    } else {
        hold_last_row(g, em_past, n_f)?
    };

    let s = rng.gen_range(1..=big_s);
    let noise = normal_tensor(n_f, f, rng);
    let zs = q_sample_var(g, enc.hm, n_p, s, &noise, sc)?;
    let cond = Conditioning {
        em: em_hol,
        voxels: enc.voxels,
        task: enc.task,
    };
    let pred = hmtm_forward(g, store, cfg, zs, &cond, s)?;
    let hm_hat = g.slice_rows(pred, n_p, t)?;
    let hm_gt = g.slice_rows(enc.hm, n_p, t)?;
    if w.vlb_hm > 0.0 {
        let per_step = sum_squares(g, hm_hat, hm_target)?;
        // The final prediction is the sampled-step prediction, so the second
        // term repeats the first.
        let fin = sum_squares(g, hm_hat, hm_target)?;
        let vlb = g.add(per_step, fin)?;
        parts.vlb_hm = scalar(g, vlb);
        terms.push((w.vlb_hm, vlb));
    }

    let gt_future = g.constant(p.future_track(target)?);
    if w.dis > 0.0 || w.angle > 0.0 {
        let traj = decode_trajectory(g, store, cfg, hm_hat)?;
        if w.dis > 0.0 {
            let l = loss_dis(g, gt_future, traj)?;
            parts.dis = scalar(g, l);
            terms.push((w.dis, l));
        }
        if w.angle > 0.0 {
            let past = p.past_track(target)?;
            let anchor = g.constant(past.slice_rows(n_p - 1, n_p)?);
            let l = loss_angle(g, anchor, gt_future, traj)?;
            parts.angle = scalar(g, l);
            terms.push((w.angle, l));
        }
    }
    if w.reg > 0.0 {
        let pseudo = decode_trajectory(g, store, cfg, hm_gt)?;
        let l = loss_reg(g, gt_future, pseudo)?;
        parts.reg = scalar(g, l);
        terms.push((w.reg, l));
    }
    if w.int > 0.0 {
        let labels = p.future_states().ok_or_else(|| {
            Error::Validation(format!(
                "clip {}: interaction loss needs state labels",
                p.id
            ))
        })?;
        let probs = decode_states(g, store, hm_hat)?;
        let l = loss_int(g, labels, probs)?;
        parts.int = scalar(g, l);
        terms.push((w.int, l));
    }
    let loss = loss_total(g, &terms)?;
    Ok(Objective { loss, parts })
}

/// `Σ_{s=2}^{S} ‖z_0,f − f(z_s, s)_f‖²` with one fixed noise draw per step.
pub fn vlb_explicit_sum(
    g: &mut Graph,
    z0: Var,
    n_p: usize,
    sc: &Schedule,
    noises: &[Tensor],
    mut predict: impl FnMut(&mut Graph, Var, usize) -> Result<Var>,
) -> Result<Var> {
    if noises.len() != sc.steps - 1 {
        return Err(Error::Dimension(format!(
            "{} noise draws for steps 2..={}",
            noises.len(),
            sc.steps
        )));
    }
    let t = g.shape(z0)[0];
    let gt = g.slice_rows(z0, n_p, t)?;
    let mut terms = Vec::with_capacity(noises.len());
    for (i, noise) in noises.iter().enumerate() {
        let s = i + 2;
        let zs = q_sample_var(g, z0, n_p, s, noise, sc)?;
        let pred = predict(g, zs, s)?;
        let pf = g.slice_rows(pred, n_p, t)?;
        terms.push((1.0, sum_squares(g, pf, gt)?));
    }
    loss_total(g, &terms)
}
