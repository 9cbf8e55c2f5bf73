use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::sample_objective;
use crate::config::{DiffusionConfig, HybridPattern, LossWeights, ModelConfig, ScheduleKind};
use crate::data::{synth_generate, SynthConfig};
use crate::diffusion::make_schedule;
use crate::error::Result;
use crate::model::Model;
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport};
use crate::pipeline::PreparedClip;

/// Settings of the whole-model finite-difference check.
#[derive(Clone, Debug)]
pub struct GradSuiteOptions {
    pub latent_dim: usize,
    pub clips: usize,
    pub diffusion_steps: usize,
    pub tol: f64,
    pub eps: f64,
    /// Entries probed per parameter tensor (evenly strided).
    pub max_entries_per_param: Option<usize>,
    /// Offset added to analytic gradients; nonzero values must fail the check.
    pub corrupt: f64,
    pub seed: u64,
}

impl Default for GradSuiteOptions {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            clips: 2,
            diffusion_steps: 10,
            tol: 1e-4,
            eps: 1e-5,
            max_entries_per_param: None,
            corrupt: 0.0,
            seed: 0,
        }
    }
}

/// Builds a small model with every block kind, two targets, voxels and both
/// branches, and checks the gradient of the mean training objective over a
/// batch of language-scenario clips with all loss terms active.
pub fn model_grad_check(opts: &GradSuiteOptions) -> Result<GradCheckReport> {
    let f = opts.latent_dim;
    let cfg = ModelConfig {
        latent_dim: f,
        feature_dim: f,
        heads: 2,
        d_state: 4,
        pattern: "EAM-SAT-TAT".parse::<HybridPattern>()?,
        joint_ids: vec![0, 4],
        ..Default::default()
    };
    let dcfg = DiffusionConfig {
        steps: opts.diffusion_steps,
        schedule: ScheduleKind::Sqrt,
        hmf_steps: opts.diffusion_steps.min(5),
        ..Default::default()
    };
    let synth = SynthConfig {
        scenario: "language-pick-place".into(),
        ..Default::default()
    };
    let clips = synth_generate(&synth, opts.clips, opts.seed)?
        .iter()
        .map(|c| PreparedClip::new(c, &cfg, &dcfg))
        .collect::<Result<Vec<_>>>()?;
    let model = Model::new(cfg, opts.seed)?;
    let sc = make_schedule(dcfg.steps, dcfg.schedule)?;
    let weights = LossWeights::default();
    let base = model.params.clone();
    let k = 1.0 / clips.len() as f64;
    let gopts = GradCheckOptions {
        eps: opts.eps,
        tol: opts.tol,
        corrupt_analytic: opts.corrupt,
        max_entries_per_param: opts.max_entries_per_param,
    };
    grad_check(
        |g, store| {
            let m = Model {
                config: model.config.clone(),
                params: store.clone(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut total = None;
            for (i, p) in clips.iter().enumerate() {
                let obj = sample_objective(
                    g,
                    &m,
                    p,
                    i % m.config.targets(),
                    &sc,
                    &weights,
                    &mut rng,
                    Some(&base),
                )?;
                let term = g.scale(obj.loss, k);
                total = Some(match total {
                    Some(acc) => g.add(acc, term)?,
                    None => term,
                });
            }
            Ok(total.expect("at least one clip"))
        },
        &model.params,
        &gopts,
    )
}
