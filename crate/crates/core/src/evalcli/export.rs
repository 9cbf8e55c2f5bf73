use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{extract_transitions, TransitionKind};
use crate::data::store::write_json;
use crate::data::DimMode;
use crate::diffusion::{dual_forecast, ForecastOptions, Schedule};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{io, Tensor};
use crate::pipeline::PreparedClip;

pub const SCHEDULE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperAction {
    Close,
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedWaypoint {
    /// 1-based future frame.
    pub frame: usize,
    /// Seconds after the last observed frame.
    pub time: f64,
    pub position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperEvent {
    pub frame: usize,
    pub time: f64,
    pub action: GripperAction,
    /// Wrist anchor at the event frame.
    pub position: [f64; 3],
}

/// Waypoints and gripper open/close commands for a manipulator, in the first
/// camera's frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSchedule {
    pub format_version: u32,
    pub clip_id: String,
    pub units: String,
    pub waypoints: Vec<TimedWaypoint>,
    pub events: Vec<GripperEvent>,
}

impl ActionSchedule {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Contact onsets close the gripper and separations open it.
pub fn export_action_schedule(
    clip_id: &str,
    mode: DimMode,
    trajectory: &Tensor,
    states: &[f64],
    fps: f64,
    threshold: f64,
) -> Result<ActionSchedule> {
    if mode != DimMode::Three {
        return Err(Error::UnsupportedMode(
            "action schedules need 3D trajectories".into(),
        ));
    }
    let (n, d) = trajectory.dims2()?;
    if d != 3 || states.len() != n {
        return Err(Error::Validation(format!(
            "trajectory {:?} and {} states do not describe the same 3D horizon",
            trajectory.shape(),
            states.len()
        )));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Validation(format!(
            "frame rate {fps} must be positive"
        )));
    }
    let pos = |t: usize| {
        let r = trajectory.row(t);
        [r[0], r[1], r[2]]
    };
    let waypoints = (0..n)
        .map(|t| TimedWaypoint {
            frame: t + 1,
            time: (t + 1) as f64 / fps,
            position: pos(t),
        })
        .collect();
    let events = extract_transitions(states, threshold)
        .into_iter()
        .map(|tr| GripperEvent {
            frame: tr.frame,
            time: tr.frame as f64 / fps,
            action: match tr.kind {
                TransitionKind::Contact => GripperAction::Close,
                TransitionKind::Separation => GripperAction::Open,
            },
            position: pos(tr.frame - 1),
        })
        .collect();
    Ok(ActionSchedule {
        format_version: SCHEDULE_FORMAT_VERSION,
        clip_id: clip_id.to_string(),
        units: "meters".into(),
        waypoints,
        events,
    })
}

/// Writes the denoised future hand-motion latents (`N_f×f`) of `target`.
pub fn export_hm_features(
    model: &Model,
    p: &PreparedClip,
    target: usize,
    sc: &Schedule,
    opts: &ForecastOptions,
    path: &Path,
) -> Result<Tensor> {
    let f = dual_forecast(model, p, target, sc, opts)?;
    io::save_f64(path, &f.hm_future)?;
    Ok(f.hm_future)
}
