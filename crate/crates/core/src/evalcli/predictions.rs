use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::cvh_baseline;
use crate::data::store::{read_json, write_json};
use crate::diffusion::{dual_forecast, ForecastOptions, Schedule};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::pipeline::PreparedClip;

pub const PREDICTIONS_FORMAT_VERSION: u32 = 1;

/// Forecast of one target on one clip, in canvas coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub joint_id: usize,
    /// `N_f` rows of 2 or 3 coordinates.
    pub trajectory: Vec<Vec<f64>>,
    /// Contact probability per future frame, when the model predicts them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<f64>>,
}

impl Prediction {
    pub fn trajectory_tensor(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.trajectory)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub format_version: u32,
    /// `"model"` or `"cvh"`.
    pub source: String,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(source: &str, predictions: Vec<Prediction>) -> Self {
        Self {
            format_version: PREDICTIONS_FORMAT_VERSION,
            source: source.to_string(),
            predictions,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = read_json(path)?;
        if set.format_version != PREDICTIONS_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported predictions format {}", set.format_version),
            ));
        }
        Ok(set)
    }

    pub fn find(&self, clip_id: &str, joint_id: usize) -> Option<&Prediction> {
        self.predictions
            .iter()
            .find(|p| p.clip_id == clip_id && p.joint_id == joint_id)
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Model forecasts for every clip and configured target, in clip order.
pub fn forecast_all(
    model: &Model,
    clips: &[PreparedClip],
    sc: &Schedule,
    opts: &ForecastOptions,
) -> Result<Vec<Prediction>> {
    let joints = &model.config.joint_ids;
    let pairs: Vec<(usize, usize)> = (0..clips.len())
        .flat_map(|c| (0..joints.len()).map(move |t| (c, t)))
        .collect();
    pairs
        .par_iter()
        .map(|&(c, t)| {
            let f = dual_forecast(model, &clips[c], t, sc, opts)?;
            Ok(Prediction {
                clip_id: clips[c].id.clone(),
                joint_id: joints[t],
                trajectory: rows(&f.trajectory),
                states: Some(f.states),
            })
        })
        .collect()
}

/// Constant-velocity forecasts for every clip and target.
pub fn cvh_all(clips: &[PreparedClip], joint_ids: &[usize]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(clips.len() * joint_ids.len());
    for p in clips {
        for (t, j) in joint_ids.iter().enumerate() {
            let tr = cvh_baseline(&p.past_track(t)?, p.n_f())?;
            out.push(Prediction {
                clip_id: p.id.clone(),
                joint_id: *j,
                trajectory: rows(&tr),
                states: None,
            });
        }
    }
    Ok(out)
}
