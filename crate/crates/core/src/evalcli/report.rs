use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ade, error_curve, extract_transitions, fde, mae_transitions, states_as_f64};
use super::predictions::{Prediction, PredictionSet};
use crate::data::cvh_baseline;
use crate::data::store::write_json;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pipeline::PreparedClip;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// What a prediction is scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub clip_id: String,
    pub joint_id: usize,
    pub trajectory: Tensor,
    pub states: Option<Vec<u8>>,
    /// Observed track, for the constant-velocity comparison.
    pub past: Option<Tensor>,
}

pub fn ground_truth_from_clips(
    clips: &[PreparedClip],
    joint_ids: &[usize],
) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for p in clips {
        if p.tracks.len() != joint_ids.len() {
            return Err(Error::Evaluation(format!(
                "clip {} has {} prepared tracks for {} joints",
                p.id,
                p.tracks.len(),
                joint_ids.len()
            )));
        }
        for (t, j) in joint_ids.iter().enumerate() {
            out.push(GroundTruth {
                clip_id: p.id.clone(),
                joint_id: *j,
                trajectory: p.future_track(t)?,
                states: p.future_states().map(<[u8]>::to_vec),
                past: Some(p.past_track(t)?),
            });
        }
    }
    Ok(out)
}

/// Treats another prediction set as the truth; probabilities are binarized
/// at `threshold`.
pub fn ground_truth_from_predictions(
    set: &PredictionSet,
    threshold: f64,
) -> Result<Vec<GroundTruth>> {
    set.predictions
        .iter()
        .map(|p| {
            Ok(GroundTruth {
                clip_id: p.clip_id.clone(),
                joint_id: p.joint_id,
                trajectory: p.trajectory_tensor()?,
                states: p
                    .states
                    .as_ref()
                    .map(|s| s.iter().map(|v| u8::from(*v >= threshold)).collect()),
                past: None,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub joint_id: usize,
    pub ade: f64,
    pub fde: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvh_ade: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvh_fde: Option<f64>,
    /// Model minus baseline; negative is better than the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ade_delta_vs_cvh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fde_delta_vs_cvh: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    /// Units of ADE, FDE and the error curve.
    pub units: String,
    pub clips: usize,
    pub ade: f64,
    pub fde: f64,
    pub targets: Vec<TargetMetrics>,
    /// Transition timing error, averaged over the pairs where it is defined.
    pub mae: Option<f64>,
    pub mae_units: String,
    pub mae_pairs: usize,
    /// Mean displacement error at each future frame.
    pub error_curve: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvh_ade: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvh_fde: Option<f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// `frame,mean_error` rows with 1-based future frames.
    pub fn error_curve_csv(&self) -> String {
        let mut s = String::from("frame,mean_error\n");
        for (i, e) in self.error_curve.iter().enumerate() {
            let _ = writeln!(s, "{},{}", i + 1, e);
        }
        s
    }
}

#[derive(Default)]
struct Acc {
    ade: f64,
    fde: f64,
    cvh_ade: f64,
    cvh_fde: f64,
    n: usize,
    n_cvh: usize,
}

/// Scores `preds` against `gt`. Every ground-truth entry needs a matching
/// prediction (same clip and joint).
pub fn evaluate(
    preds: &[Prediction],
    gt: &[GroundTruth],
    threshold: f64,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if gt.is_empty() {
        return Err(Error::Evaluation("nothing to evaluate".into()));
    }
    let mut joints: Vec<usize> = Vec::new();
    let mut acc: Vec<Acc> = Vec::new();
    let mut trajs = Vec::with_capacity(gt.len());
    let (mut mae_sum, mut mae_n) = (0.0, 0usize);
    let mut clip_ids: Vec<&str> = Vec::new();
    let (mut sum_ade, mut sum_fde) = (0.0, 0.0);
    let (mut sum_cvh_ade, mut sum_cvh_fde, mut n_cvh) = (0.0, 0.0, 0usize);
    for g in gt {
        let p = preds
            .iter()
            .find(|p| p.clip_id == g.clip_id && p.joint_id == g.joint_id)
            .ok_or_else(|| {
                Error::Evaluation(format!(
                    "no prediction for clip {} joint {}",
                    g.clip_id, g.joint_id
                ))
            })?;
        let tr = p.trajectory_tensor()?;
        let a = ade(&tr, &g.trajectory)?;
        let f = fde(&tr, &g.trajectory)?;
        let k = match joints.iter().position(|j| *j == g.joint_id) {
            Some(k) => k,
            None => {
                joints.push(g.joint_id);
                acc.push(Acc::default());
                joints.len() - 1
            }
        };
        acc[k].ade += a;
        acc[k].fde += f;
        acc[k].n += 1;
        sum_ade += a;
        sum_fde += f;
        if let Some(past) = &g.past {
            let cv = cvh_baseline(past, g.trajectory.rows())?;
            let (ca, cf) = (ade(&cv, &g.trajectory)?, fde(&cv, &g.trajectory)?);
            acc[k].cvh_ade += ca;
            acc[k].cvh_fde += cf;
            acc[k].n_cvh += 1;
            sum_cvh_ade += ca;
            sum_cvh_fde += cf;
            n_cvh += 1;
        }
        if let (Some(gs), Some(ps)) = (&g.states, &p.states) {
            let gt_tr = extract_transitions(&states_as_f64(gs), 0.5);
            let pr_tr = extract_transitions(ps, threshold);
            if let Some(m) = mae_transitions(&pr_tr, &gt_tr, gs.len()) {
                mae_sum += m;
                mae_n += 1;
            }
        }
        if !clip_ids.contains(&g.clip_id.as_str()) {
            clip_ids.push(&g.clip_id);
        }
        trajs.push((tr, g.trajectory.clone()));
    }
    let pairs: Vec<(&Tensor, &Tensor)> = trajs.iter().map(|(a, b)| (a, b)).collect();
    let curve = error_curve(&pairs)?;
    let n = gt.len() as f64;
    let targets = joints
        .iter()
        .zip(&acc)
        .map(|(j, a)| {
            let m = a.n as f64;
            let cvh =
                (a.n_cvh > 0).then(|| (a.cvh_ade / a.n_cvh as f64, a.cvh_fde / a.n_cvh as f64));
            TargetMetrics {
                joint_id: *j,
                ade: a.ade / m,
                fde: a.fde / m,
                cvh_ade: cvh.map(|c| c.0),
                cvh_fde: cvh.map(|c| c.1),
                ade_delta_vs_cvh: cvh.map(|c| a.ade / m - c.0),
                fde_delta_vs_cvh: cvh.map(|c| a.fde / m - c.1),
            }
        })
        .collect();
    let units = if gt[0].trajectory.cols() == 3 {
        "meters"
    } else {
        "normalized image units"
    };
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        units: units.into(),
        clips: clip_ids.len(),
        ade: sum_ade / n,
        fde: sum_fde / n,
        targets,
        mae: (mae_n > 0).then(|| mae_sum / mae_n as f64),
        mae_units: "frames".into(),
        mae_pairs: mae_n,
        error_curve: curve,
        cvh_ade: (n_cvh > 0).then(|| sum_cvh_ade / n_cvh as f64),
        cvh_fde: (n_cvh > 0).then(|| sum_cvh_fde / n_cvh as f64),
        config,
    })
}
