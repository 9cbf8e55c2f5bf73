use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, VlProvider};
use crate::data::Clip;
use crate::error::{Error, Result};
use crate::numerics::nn::{linear, mlp_forward};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Frame index used to key task embeddings apart from per-frame features.
const TASK_KEY: u64 = u64::MAX;

pub fn make_target_indicator(index: usize, e: usize) -> Result<Vec<f64>> {
    if index >= e {
        return Err(Error::Range(format!(
            "target index {index} out of range for {e} targets"
        )));
    }
    let mut v = vec![0.0; e];
    v[index] = 1.0;
    Ok(v)
}

/// Unit-norm Gaussian vector keyed by `(seed, frame, text)` through SHA-256.
pub fn stub_embedding(seed: u64, frame: u64, text: &str, width: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(frame.to_le_bytes());
    h.update(text.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let v: Vec<f64> = (0..width)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

pub fn provide_task_embedding(instruction: &str, width: usize, seed: u64) -> Vec<f64> {
    stub_embedding(seed, TASK_KEY, instruction, width)
}

/// First `rows` frames of VL features, `rows×vl_width`.
pub fn provide_vl_features(clip: &Clip, cfg: &ModelConfig, rows: usize) -> Result<Tensor> {
    match cfg.vl_provider {
        VlProvider::File => {
            let vl = clip.vl.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "clip {}: the file VL provider needs vl.uhnd features",
                    clip.id
                ))
            })?;
            if vl.cols() != cfg.vl_dim {
                return Err(Error::Dimension(format!(
                    "clip {}: VL features have width {}, config expects {}",
                    clip.id,
                    vl.cols(),
                    cfg.vl_dim
                )));
            }
            vl.slice_rows(0, rows)
        }
        VlProvider::Stub => {
            let w = cfg.feature_dim;
            let data = (0..rows as u64)
                .flat_map(|t| stub_embedding(cfg.embed_seed, t, &cfg.prompt, w))
                .collect();
            Tensor::matrix(rows, w, data)
        }
    }
}

/// Stabilizer of the row standardization that ends both latent encoders.
pub const LATENT_EPS: f64 = 1e-5;

/// Per-frame waypoint MLP.
pub fn encode_waypoints(g: &mut Graph, store: &ParamStore, waypoints: Var) -> Result<Var> {
    if !g.value(waypoints).all_finite() {
        return Err(Error::Validation("non-finite waypoint".into()));
    }
    mlp_forward(g, store, "enc.wp", 2, waypoints)
}

/// Whether future frames (`ℓ = N_f`) accompany the observed ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Training { n_f: usize },
    Inference,
}

impl FusionMode {
    pub fn extra_rows(self) -> usize {
        match self {
            FusionMode::Training { n_f } => n_f,
            FusionMode::Inference => 0,
        }
    }
}

/// Inputs of the fusion MLP for `N_p + ℓ` frames.
#[derive(Clone, Debug)]
pub struct FeatureBundle<'a> {
    pub vl: &'a Tensor,
    pub waypoints: &'a Tensor,
    pub task: Option<&'a [f64]>,
    pub target: &'a [f64],
    pub n_p: usize,
    pub mode: FusionMode,
}

/// `[vl ‖ wp ‖ task ‖ target]` per frame through an MLP, each output row
/// standardized to zero mean and unit variance; an absent task is a zero tile.
pub fn vl_fuse(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    b: &FeatureBundle,
) -> Result<Var> {
    let rows = b.n_p + b.mode.extra_rows();
    if b.n_p == 0 || matches!(b.mode, FusionMode::Training { n_f: 0 }) {
        return Err(Error::Validation(
            "fusion needs N_p >= 1 and, in training, N_f >= 1".into(),
        ));
    }
    if b.vl.rows() != rows || b.waypoints.rows() != rows {
        return Err(Error::Validation(format!(
            "fusion expects {rows} frames ({:?}), got {} VL and {} waypoint rows",
            b.mode,
            b.vl.rows(),
            b.waypoints.rows()
        )));
    }
    let ones = b.target.iter().filter(|v| **v == 1.0).count();
    if b.target.len() != cfg.targets()
        || ones != 1
        || b.target.iter().any(|v| *v != 0.0 && *v != 1.0)
    {
        return Err(Error::Validation(format!(
            "target indicator {:?} is not one-hot of width {}",
            b.target,
            cfg.targets()
        )));
    }
    let x = cfg.feature_dim;
    let vl = g.constant(b.vl.clone());
    let vl = linear(g, store, "enc.vl", vl)?;
    let wp = g.constant(b.waypoints.clone());
    let wp = encode_waypoints(g, store, wp)?;
    let task = match b.task {
        Some(t) if t.len() != x => {
            return Err(Error::Dimension(format!(
                "task embedding has width {}, expected {x}",
                t.len()
            )))
        }
        Some(t) => Tensor::row_vector(t),
        None => Tensor::zeros(&[1, x]),
    };
    let task = g.constant(task);
    let task = g.repeat_row(task, rows);
    let tar = g.constant(Tensor::row_vector(b.target));
    let tar = g.repeat_row(tar, rows);
    let cat = g.concat_cols(&[vl, wp, task, tar])?;
    let h = mlp_forward(g, store, "enc.fuse", 2, cat)?;
    g.normalize_rows(h, LATENT_EPS)
}
