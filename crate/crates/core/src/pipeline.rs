//! Per-clip model inputs: canvas tracks, egomotion features, VL features,
//! task embedding and voxel grid, plus their encoding onto a graph.

use std::collections::BTreeMap;

use crate::config::{DiffusionConfig, ModelConfig};
use crate::data::{canvas_track, Clip, HorizonSplit};
use crate::encoders::{
    egomotion_inputs, encode_egomotion, encode_voxels, make_target_indicator,
    provide_task_embedding, provide_vl_features, scene_grid, vl_fuse, FeatureBundle, FusionMode,
};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedClip {
    pub id: String,
    pub scenario: Option<String>,
    pub horizon: HorizonSplit,
    /// `frames×9` egomotion encoder inputs.
    pub em_inputs: Tensor,
    /// Canvas track per configured target, `frames×dim`.
    pub tracks: Vec<Tensor>,
    pub vl: Tensor,
    pub task_text: Option<String>,
    pub task: Option<Vec<f64>>,
    /// `[1, 20, 20, 20]` grid of the observed frames.
    pub voxels: Option<Tensor>,
    pub states: Option<Vec<u8>>,
    pub annotations: BTreeMap<String, Vec<f64>>,
}

impl PreparedClip {
    pub fn new(clip: &Clip, cfg: &ModelConfig, dcfg: &DiffusionConfig) -> Result<Self> {
        clip.validate()?;
        if clip.mode != cfg.mode {
            return Err(Error::Validation(format!(
                "clip {} is {:?} but the model is configured for {:?}",
                clip.id, clip.mode, cfg.mode
            )));
        }
        let frames = clip.frames();
        let horizon = if cfg.hat_mode {
            if frames < 2 {
                return Err(Error::Validation(format!(
                    "clip {} has fewer than 2 frames",
                    clip.id
                )));
            }
            HorizonSplit {
                n_p: 1,
                n_f: frames - 1,
            }
        } else {
            dcfg.split.split(frames)?
        };
        let em_inputs = if cfg.hat_mode {
            Tensor::zeros(&[frames, 9])
        } else {
            let homs = clip.homographies.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "clip {}: field 'homographies' is required for egomotion",
                    clip.id
                ))
            })?;
            egomotion_inputs(homs, clip.image_size)?
        };
        let tracks = cfg
            .joint_ids
            .iter()
            .map(|id| canvas_track(clip, *id))
            .collect::<Result<Vec<_>>>()?;
        let vl = provide_vl_features(clip, cfg, frames)?;
        let task = clip
            .task
            .as_deref()
            .map(|t| provide_task_embedding(t, cfg.feature_dim, cfg.embed_seed));
        let voxels = if cfg.voxels {
            Some(scene_grid(clip, horizon.n_p, &cfg.grid)?)
        } else {
            None
        };
        Ok(Self {
            id: clip.id.clone(),
            scenario: clip.scenario.clone(),
            horizon,
            em_inputs,
            tracks,
            vl,
            task_text: clip.task.clone(),
            task,
            voxels,
            states: clip.states.clone(),
            annotations: clip.annotations.clone(),
        })
    }

    pub fn n_p(&self) -> usize {
        self.horizon.n_p
    }

    pub fn n_f(&self) -> usize {
        self.horizon.n_f
    }

    pub fn past_track(&self, target: usize) -> Result<Tensor> {
        self.tracks[target].slice_rows(0, self.n_p())
    }

    pub fn future_track(&self, target: usize) -> Result<Tensor> {
        self.tracks[target].slice_rows(self.n_p(), self.horizon.total())
    }

    pub fn future_states(&self) -> Option<&[u8]> {
        self.states
            .as_ref()
            .map(|s| &s[self.n_p()..self.horizon.total()])
    }

    /// Same clip under a different instruction.
    pub fn with_task(&self, text: &str, cfg: &ModelConfig) -> Self {
        let mut out = self.clone();
        out.task_text = Some(text.to_string());
        out.task = Some(provide_task_embedding(
            text,
            cfg.feature_dim,
            cfg.embed_seed,
        ));
        out
    }
}

/// Latents of one clip for one target on a graph.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub em: Var,
    pub hm: Var,
    pub voxels: Option<Var>,
    pub task: Option<Var>,
}

/// Encodes the observed frames (inference) or all `N_p + N_f` frames
/// (training).
pub fn encode(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    p: &PreparedClip,
    target: usize,
    mode: FusionMode,
) -> Result<Encoded> {
    if target >= p.tracks.len() {
        return Err(Error::Range(format!(
            "target {target} out of range for {} tracks",
            p.tracks.len()
        )));
    }
    let rows = p.n_p() + mode.extra_rows();
    if rows > p.horizon.total() {
        return Err(Error::Validation(format!(
            "{rows} rows requested from a {}-frame horizon",
            p.horizon.total()
        )));
    }
    let em_in = g.constant(p.em_inputs.slice_rows(0, rows)?);
    let em = encode_egomotion(g, store, em_in)?;
    let vl = p.vl.slice_rows(0, rows)?;
    let wp = p.tracks[target].slice_rows(0, rows)?;
    let indicator = make_target_indicator(target, cfg.targets())?;
    let hm = vl_fuse(
        g,
        store,
        cfg,
        &FeatureBundle {
            vl: &vl,
            waypoints: &wp,
            task: p.task.as_deref(),
            target: &indicator,
            n_p: p.n_p(),
            mode,
        },
    )?;
    let voxels = match (&p.voxels, cfg.voxels) {
        (Some(grid), true) => {
            let v = g.constant(grid.clone());
            Some(encode_voxels(g, store, v)?)
        }
        _ => None,
    };
    let task = p.task.as_ref().map(|t| g.constant(Tensor::row_vector(t)));
    if cfg.pattern.has_tat() && task.is_none() {
        return Err(Error::Config(format!(
            "clip {}: pattern {} contains TAT but the clip has no task instruction",
            p.id, cfg.pattern
        )));
    }
    Ok(Encoded {
        em,
        hm,
        voxels,
        task,
    })
}

/// Holds the last observed egomotion row over the future horizon.
pub fn hold_last_row(g: &mut Graph, em_past: Var, n_f: usize) -> Result<Var> {
    let n_p = g.shape(em_past)[0];
    let last = g.slice_rows(em_past, n_p - 1, n_p)?;
    let tail = g.repeat_row(last, n_f);
    g.concat_rows(&[em_past, tail])
}
