use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

pub const BCE_EPS: f64 = 1e-12;

fn check_finite(g: &Graph, vars: &[Var], what: &str) -> Result<()> {
    if vars.iter().all(|v| g.value(*v).all_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what}: non-finite input")))
    }
}

/// `Σ (a - b)²`.
pub fn sum_squares(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// Mean Euclidean distance between corresponding rows.
pub fn loss_dis(g: &mut Graph, gt: Var, pred: Var) -> Result<Var> {
    check_finite(g, &[gt, pred], "displacement loss")?;
    let d = g.sub(pred, gt)?;
    let n = g.row_norm(d)?;
    Ok(g.mean(n))
}

/// Mean distance between the ground truth and the decoded ground-truth latents.
pub fn loss_reg(g: &mut Graph, gt: Var, pseudo: Var) -> Result<Var> {
    loss_dis(g, gt, pseudo)
}

/// Mean `1 - cos` between ground-truth and predicted displacement vectors.
/// Both sequences start at the shared last observed waypoint, so `N_f`
/// future rows give `N_f` displacements.
pub fn loss_angle(g: &mut Graph, anchor: Var, gt: Var, pred: Var) -> Result<Var> {
    check_finite(g, &[anchor, gt, pred], "angle loss")?;
    let n = g.shape(gt)[0];
    let full_gt = g.concat_rows(&[anchor, gt])?;
    let full_pred = g.concat_rows(&[anchor, pred])?;
    let disp = |g: &mut Graph, x: Var| -> Result<Var> {
        let a = g.slice_rows(x, 1, n + 1)?;
        let b = g.slice_rows(x, 0, n)?;
        g.sub(a, b)
    };
    let dg = disp(g, full_gt)?;
    let dp = disp(g, full_pred)?;
    let cos = g.row_cosine(dg, dp)?;
    let one_minus = g.scale(cos, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    Ok(g.mean(one_minus))
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1 - ε]`.
pub fn loss_int(g: &mut Graph, labels: &[u8], probs: Var) -> Result<Var> {
    check_finite(g, &[probs], "interaction loss")?;
    if g.value(probs).len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} probabilities",
            labels.len(),
            g.value(probs).len()
        )));
    }
    let shape = g.shape(probs).to_vec();
    let y = Tensor::new(shape.clone(), labels.iter().map(|v| *v as f64).collect())?;
    let ny = y.map(|v| 1.0 - v);
    let p = g.clamp(probs, BCE_EPS, 1.0 - BCE_EPS);
    let lp = g.log(p);
    let q = g.scale(p, -1.0);
    let q = g.add_scalar(q, 1.0);
    let lq = g.log(q);
    let yc = g.constant(y);
    let nyc = g.constant(ny);
    let a = g.mul(yc, lp)?;
    let b = g.mul(nyc, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.scale(m, -1.0))
}

/// Reference binary cross-entropy on plain numbers.
pub fn bce(labels: &[u8], probs: &[f64]) -> f64 {
    let n = labels.len() as f64;
    labels
        .iter()
        .zip(probs)
        .map(|(y, p)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if *y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Values of the individual terms of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub vlb_em: f64,
    pub vlb_hm: f64,
    pub dis: f64,
    pub angle: f64,
    pub reg: f64,
    pub int: f64,
}

impl LossParts {
    pub fn add_scaled(&mut self, other: &LossParts, k: f64) {
        self.vlb_em += k * other.vlb_em;
        self.vlb_hm += k * other.vlb_hm;
        self.dis += k * other.dis;
        self.angle += k * other.angle;
        self.reg += k * other.reg;
        self.int += k * other.int;
    }

    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.vlb_em * self.vlb_em
            + w.vlb_hm * self.vlb_hm
            + w.dis * self.dis
            + w.angle * self.angle
            + w.reg * self.reg
            + w.int * self.int
    }
}

/// `Σ λ_i L_i` over the terms that were built; an empty list yields 0.
pub fn loss_total(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (w, v) in terms {
        if *w == 0.0 {
            continue;
        }
        let t = g.scale(*v, *w);
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    })
}
