use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    let (n, d) = gt.dims2()?;
    if pred.dims2()? != (n, d) {
        return Err(Error::Validation(format!(
            "prediction shape {:?} does not match ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if n == 0 {
        return Err(Error::Validation(
            "trajectories must have at least one waypoint".into(),
        ));
    }
    Ok((n, d))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean error of every waypoint.
pub fn displacement_errors(pred: &Tensor, gt: &Tensor) -> Result<Vec<f64>> {
    let (n, _) = check_pair(pred, gt)?;
    Ok((0..n).map(|t| dist(pred.row(t), gt.row(t))).collect())
}

pub fn ade(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let e = displacement_errors(pred, gt)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn fde(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (n, _) = check_pair(pred, gt)?;
    Ok(dist(pred.row(n - 1), gt.row(n - 1)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    /// Separation to contact.
    Contact,
    /// Contact to separation.
    Separation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    /// 1-based frame of the first sample of the new run.
    pub frame: usize,
    pub kind: TransitionKind,
}

/// Binarizes at `threshold` (`p >= threshold` is contact) and reports the
/// first frame of every run that differs from its predecessor. The state
/// before the first frame counts as separation.
pub fn extract_transitions(values: &[f64], threshold: f64) -> Vec<Transition> {
    let mut prev = false;
    let mut out = Vec::new();
    for (t, v) in values.iter().enumerate() {
        let cur = *v >= threshold;
        if cur != prev {
            out.push(Transition {
                frame: t + 1,
                kind: if cur {
                    TransitionKind::Contact
                } else {
                    TransitionKind::Separation
                },
            });
        }
        prev = cur;
    }
    out
}

pub fn states_as_f64(states: &[u8]) -> Vec<f64> {
    states.iter().map(|s| f64::from(*s)).collect()
}

/// Mean absolute timing error, in frames, between predicted and ground-truth
/// transitions. Same-kind transitions are paired in order; every transition
/// left without a partner on either side costs `n_f` frames. `None` when the
/// ground truth has no transitions.
pub fn mae_transitions(pred: &[Transition], gt: &[Transition], n_f: usize) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for kind in [TransitionKind::Contact, TransitionKind::Separation] {
        let p: Vec<usize> = pred
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.frame)
            .collect();
        let g: Vec<usize> = gt
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.frame)
            .collect();
        for (a, b) in p.iter().zip(&g) {
            total += a.abs_diff(*b) as f64;
        }
        let missed = p.len().abs_diff(g.len());
        total += (missed * n_f) as f64;
        count += p.len().max(g.len());
    }
    Some(total / count as f64)
}

/// Per-frame mean error over a set of equally long trajectories.
pub fn error_curve(pairs: &[(&Tensor, &Tensor)]) -> Result<Vec<f64>> {
    let Some(first) = pairs.first() else {
        return Err(Error::Evaluation("no trajectories to evaluate".into()));
    };
    let n = first.1.rows();
    let mut curve = vec![0.0; n];
    for (pred, gt) in pairs {
        let e = displacement_errors(pred, gt)?;
        if e.len() != n {
            return Err(Error::Evaluation(format!(
                "trajectory lengths differ ({} vs {n})",
                e.len()
            )));
        }
        for (c, v) in curve.iter_mut().zip(e) {
            *c += v;
        }
    }
    for c in &mut curve {
        *c /= pairs.len() as f64;
    }
    Ok(curve)
}
