use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::geometry::{det3, Mat3, Mat4, IDENTITY3};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Waypoint space: normalized first-image-plane coordinates or metric
/// first-camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DimMode {
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

impl DimMode {
    pub fn width(self) -> usize {
        match self {
            DimMode::Two => 2,
            DimMode::Three => 3,
        }
    }
}

/// Prediction targets (hand joints) and the width of the one-hot indicator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSet {
    pub ids: Vec<usize>,
    pub names: Vec<String>,
}

impl JointSet {
    pub fn new(ids: Vec<usize>, names: Vec<String>) -> Result<Self> {
        let js = Self { ids, names };
        js.validate()?;
        Ok(js)
    }

    /// Wrist, thumb and index joints in MANO order.
    pub fn mano() -> Self {
        Self {
            ids: vec![0, 1, 4, 5, 8],
            names: ["wrist", "thumb_cmc", "thumb_tip", "index_mcp", "index_tip"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn wrist() -> Self {
        Self {
            ids: vec![0],
            names: vec!["wrist".into()],
        }
    }

    /// Keeps only the listed joint ids, in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let mut names = Vec::with_capacity(ids.len());
        for id in ids {
            let k = self
                .position(*id)
                .ok_or_else(|| Error::Range(format!("joint id {id} not in set {:?}", self.ids)))?;
            names.push(self.names[k].clone());
        }
        Self::new(ids.to_vec(), names)
    }

    pub fn width(&self) -> usize {
        self.ids.len()
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&j| j == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.is_empty() || self.ids.len() != self.names.len() {
            return Err(Error::Validation(format!(
                "joint set needs matching, nonempty ids and names (got {} ids, {} names)",
                self.ids.len(),
                self.names.len()
            )));
        }
        let mut seen = self.ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.ids.len() {
            return Err(Error::Validation(format!(
                "duplicate joint ids in {:?}",
                self.ids
            )));
        }
        Ok(())
    }
}

/// One frame's depth points in that frame's camera coordinates, with the
/// points that belong to the arm flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    /// `n×3`, meters.
    pub points: Tensor,
    pub arm_mask: Vec<bool>,
}

/// One egocentric sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub mode: DimMode,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub scenario: Option<String>,
    /// Frame-`t`-to-first-frame homographies, bottom-right entry 1.
    pub homographies: Option<Vec<Mat3>>,
    /// Camera-to-world rigid poses.
    pub poses: Option<Vec<Mat4>>,
    pub point_clouds: Option<Vec<PointCloud>>,
    pub joint_set: JointSet,
    /// One `frames×dim` tensor per joint, expressed per frame in that frame's
    /// camera (3D, meters) or image (2D, pixels).
    pub waypoints: Vec<Tensor>,
    /// Hand-object contact labels per frame.
    pub states: Option<Vec<u8>>,
    pub task: Option<String>,
    /// Precomputed per-frame vision-language features, `frames×d`.
    pub vl: Option<Tensor>,
    /// Free-form metric annotations in canvas coordinates (e.g. object positions).
    pub annotations: BTreeMap<String, Vec<f64>>,
}

impl Clip {
    pub fn frames(&self) -> usize {
        self.waypoints.first().map_or(0, Tensor::rows)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames();
        self.joint_set.validate()?;
        if self.waypoints.len() != self.joint_set.width() {
            return Err(Error::Validation(format!(
                "clip {}: {} waypoint tracks for {} joints",
                self.id,
                self.waypoints.len(),
                self.joint_set.width()
            )));
        }
        for (k, w) in self.waypoints.iter().enumerate() {
            if w.dims2()? != (n, self.mode.width()) {
                return Err(Error::Validation(format!(
                    "clip {}: waypoint track {k} has shape {:?}, expected [{n}, {}]",
                    self.id,
                    w.shape(),
                    self.mode.width()
                )));
            }
            if !w.all_finite() {
                return Err(Error::Validation(format!(
                    "clip {}: non-finite waypoint in track {k}",
                    self.id
                )));
            }
        }
        if let Some(states) = &self.states {
            if states.len() != n || states.iter().any(|s| *s > 1) {
                return Err(Error::Validation(format!(
                    "clip {}: interaction states must be {n} binary labels",
                    self.id
                )));
            }
        }
        if let Some(hs) = &self.homographies {
            if hs.len() != n {
                return Err(Error::Validation(format!(
                    "clip {}: {} homographies for {n} frames",
                    self.id,
                    hs.len()
                )));
            }
            if hs[0] != IDENTITY3 {
                return Err(Error::Validation(format!(
                    "clip {}: first homography must be the identity",
                    self.id
                )));
            }
            if let Some(t) = hs.iter().position(|h| det3(h).abs() <= 1e-9) {
                return Err(Error::Validation(format!(
                    "clip {}: homography {t} is singular",
                    self.id
                )));
            }
        }
        if let Some(ps) = &self.poses {
            if ps.len() != n {
                return Err(Error::Validation(format!(
                    "clip {}: {} poses for {n} frames",
                    self.id,
                    ps.len()
                )));
            }
        }
        if let Some(pcs) = &self.point_clouds {
            if pcs.len() != n {
                return Err(Error::Validation(format!(
                    "clip {}: {} point clouds for {n} frames",
                    self.id,
                    pcs.len()
                )));
            }
            for pc in pcs {
                if pc.points.cols() != 3 || pc.points.rows() != pc.arm_mask.len() {
                    return Err(Error::Validation(format!(
                        "clip {}: malformed point cloud",
                        self.id
                    )));
                }
            }
        }
        if let Some(vl) = &self.vl {
            if vl.rows() != n {
                return Err(Error::Validation(format!(
                    "clip {}: vl features have {} rows",
                    self.id,
                    vl.rows()
                )));
            }
        }
        Ok(())
    }

    pub fn track(&self, joint_id: usize) -> Result<&Tensor> {
        let k = self.joint_set.position(joint_id).ok_or_else(|| {
            Error::Range(format!(
                "clip {} has no joint {joint_id} (set {:?})",
                self.id, self.joint_set.ids
            ))
        })?;
        Ok(&self.waypoints[k])
    }

    pub fn annotation(&self, key: &str) -> Option<&[f64]> {
        self.annotations.get(key).map(Vec::as_slice)
    }
}

/// Fraction of each clip used as the observed past.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub past_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { past_fraction: 0.6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonSplit {
    pub n_p: usize,
    pub n_f: usize,
}

impl HorizonSplit {
    pub fn past(&self) -> Range<usize> {
        0..self.n_p
    }

    pub fn future(&self) -> Range<usize> {
        self.n_p..self.n_p + self.n_f
    }

    pub fn total(&self) -> usize {
        self.n_p + self.n_f
    }
}

impl SplitSpec {
    /// `N_p = round(frames * fraction)` clamped to `[1, frames - 1]`.
    pub fn split(&self, frames: usize) -> Result<HorizonSplit> {
        if frames < 2 {
            return Err(Error::Validation(format!(
                "a clip needs at least 2 frames to split, got {frames}"
            )));
        }
        if !(self.past_fraction.is_finite() && self.past_fraction > 0.0 && self.past_fraction < 1.0)
        {
            return Err(Error::Validation(format!(
                "past fraction {} outside (0, 1)",
                self.past_fraction
            )));
        }
        let n_p = ((frames as f64 * self.past_fraction).round() as usize).clamp(1, frames - 1);
        Ok(HorizonSplit {
            n_p,
            n_f: frames - n_p,
        })
    }
}

/// Past and future frame ranges of `clip`.
pub fn split_past_future(clip: &Clip, spec: &SplitSpec) -> Result<(Range<usize>, Range<usize>)> {
    let s = spec.split(clip.frames())?;
    Ok((s.past(), s.future()))
}
