//! Expressing per-frame waypoints on the first frame's canvas.

use super::clip::{Clip, DimMode};
use super::geometry::{mat3_vec, mat4_mul, rigid_inverse, transform_point, Mat3};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CanvasTrack {
    /// `frames×dim` canvas coordinates; rows flagged invalid hold zeros.
    pub points: Tensor,
    pub valid: Vec<bool>,
}

impl CanvasTrack {
    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }
}

/// Maps pixel `(u, v)` through `h`; `None` when the point lands on or behind
/// the homography's horizon (`w' <= 0`).
pub fn apply_homography(h: &Mat3, u: f64, v: f64) -> Option<(f64, f64)> {
    let p = mat3_vec(h, &[u, v, 1.0]);
    if p[2] <= 0.0 {
        None
    } else {
        Some((p[0] / p[2], p[1] / p[2]))
    }
}

/// 3D: `p' = pose_first⁻¹ · pose_t · p`. 2D: homogeneous map by `M_t`, then
/// division by the image size so that pixel `(w, h)` becomes `(1, 1)`.
pub fn to_first_frame_canvas(waypoints: &Tensor, clip: &Clip) -> Result<CanvasTrack> {
    let (n, d) = waypoints.dims2()?;
    if d != clip.mode.width() {
        return Err(Error::Dimension(format!(
            "waypoints have width {d} but clip {} is {:?}",
            clip.id, clip.mode
        )));
    }
    let mut out = vec![0.0; n * d];
    let mut valid = vec![true; n];
    match clip.mode {
        DimMode::Three => {
            let poses = clip.poses.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "clip {}: field 'poses' is required for 3D canvas",
                    clip.id
                ))
            })?;
            if poses.len() < n {
                return Err(Error::Validation(format!(
                    "clip {}: too few poses",
                    clip.id
                )));
            }
            let first_inv = rigid_inverse(&poses[0]);
            for t in 0..n {
                let rel = mat4_mul(&first_inv, &poses[t]);
                let r = waypoints.row(t);
                let p = transform_point(&rel, &[r[0], r[1], r[2]]);
                out[t * 3..t * 3 + 3].copy_from_slice(&p);
            }
        }
        DimMode::Two => {
            let hs = clip.homographies.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "clip {}: field 'homographies' is required for 2D canvas",
                    clip.id
                ))
            })?;
            if hs.len() < n {
                return Err(Error::Validation(format!(
                    "clip {}: too few homographies",
                    clip.id
                )));
            }
            let (h, w) = clip.image_size;
            for t in 0..n {
                let r = waypoints.row(t);
                match apply_homography(&hs[t], r[0], r[1]) {
                    Some((u, v)) => {
                        out[t * 2] = u / w as f64;
                        out[t * 2 + 1] = v / h as f64;
                    }
                    None => valid[t] = false,
                }
            }
        }
    }
    Ok(CanvasTrack {
        points: Tensor::matrix(n, d, out)?,
        valid,
    })
}

/// Canvas track of one joint, failing if any waypoint is invalid.
pub fn canvas_track(clip: &Clip, joint_id: usize) -> Result<Tensor> {
    let c = to_first_frame_canvas(clip.track(joint_id)?, clip)?;
    if let Some(t) = c.valid.iter().position(|v| !v) {
        return Err(Error::Validation(format!(
            "clip {}: waypoint at frame {t} maps behind the homography horizon",
            clip.id
        )));
    }
    Ok(c.points)
}
