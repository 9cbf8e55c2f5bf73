use std::io::Write;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::LossParts;
use super::objective::sample_objective;
use super::optim::AdamW;
use crate::config::{DiffusionConfig, TrainingConfig};
use crate::diffusion::{dual_forecast, make_schedule, ForecastOptions, Schedule};
use crate::error::{Error, Result};
use crate::evalcli::metrics::{ade, fde};
use crate::model::Model;
use crate::numerics::Graph;
use crate::pipeline::PreparedClip;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted loss over the epoch's samples.
    pub loss: f64,
    #[serde(flatten)]
    pub parts: LossParts,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_ade: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_fde: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub steps: usize,
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub parts: LossParts,
}

/// One AdamW step on the mean loss of `batch` (clip index, target index).
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    clips: &[PreparedClip],
    batch: &[(usize, usize)],
    sc: &Schedule,
    tcfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let k = 1.0 / batch.len() as f64;
    let mut grads: IndexMap<String, Vec<f64>> = IndexMap::new();
    let mut loss = 0.0;
    let mut parts = LossParts::default();
    for &(ci, target) in batch {
        let p = &clips[ci];
        let mut g = Graph::new();
        let obj = sample_objective(&mut g, model, p, target, sc, &tcfg.weights, rng, None)?;
        let value = g.value(obj.loss).data()[0];
        if !value.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|(c, _)| clips[*c].id.as_str()).collect();
            return Err(Error::Runtime(format!(
                "non-finite loss at step {step} on clip {} (batch {ids:?})",
                p.id
            )));
        }
        loss += k * value;
        parts.add_scaled(&obj.parts, k);
        let gr = g.backward(obj.loss)?;
        for (name, t) in g.param_grads(&gr) {
            let acc = grads.entry(name).or_insert_with(|| vec![0.0; t.len()]);
            for (a, v) in acc.iter_mut().zip(t.data()) {
                *a += k * v;
            }
        }
    }
    opt.step(&mut model.params, &grads)?;
    Ok(StepStats { loss, parts })
}

/// Mean ADE and FDE over every (clip, target) pair.
pub fn validate(
    model: &Model,
    clips: &[PreparedClip],
    sc: &Schedule,
    opts: &ForecastOptions,
) -> Result<(f64, f64)> {
    let targets = model.config.targets();
    let pairs: Vec<(usize, usize)> = (0..clips.len())
        .flat_map(|c| (0..targets).map(move |t| (c, t)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Evaluation("no validation clips".into()));
    }
    let errs = pairs
        .par_iter()
        .map(|&(c, t)| {
            let f = dual_forecast(model, &clips[c], t, sc, opts)?;
            let gt = clips[c].future_track(t)?;
            Ok((ade(&f.trajectory, &gt)?, fde(&f.trajectory, &gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = errs.len() as f64;
    Ok((
        errs.iter().map(|e| e.0).sum::<f64>() / n,
        errs.iter().map(|e| e.1).sum::<f64>() / n,
    ))
}

/// Trains `model` in place for `tcfg.epochs` epochs. Every epoch reshuffles
/// the (clip, target) pairs with the run's seeded RNG. With `eval_every > 0`
/// the validation set is forecast every that many epochs and after the last.
pub fn train(
    model: &mut Model,
    clips: &[PreparedClip],
    val: &[PreparedClip],
    dcfg: &DiffusionConfig,
    tcfg: &TrainingConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    tcfg.validate()?;
    dcfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Validation("no training clips".into()));
    }
    if tcfg.weights.int > 0.0 {
        if let Some(p) = clips.iter().find(|p| p.states.is_none()) {
            return Err(Error::Validation(format!(
                "interaction loss weight is positive but clip {} has no state labels",
                p.id
            )));
        }
    }
    let sc = make_schedule(dcfg.steps, dcfg.schedule)?;
    let opts = ForecastOptions {
        hmf_steps: dcfg.hmf_steps,
        seed: tcfg.seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut opt = AdamW::new(tcfg);
    let targets = model.config.targets();
    let mut order: Vec<(usize, usize)> = (0..clips.len())
        .flat_map(|c| (0..targets).map(move |t| (c, t)))
        .collect();
    let mut report = TrainReport::default();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut parts = LossParts::default();
        let batches = order.chunks(tcfg.batch_size);
        let w = 1.0 / order.len() as f64;
        for batch in batches {
            let st = train_step(
                model,
                &mut opt,
                clips,
                batch,
                &sc,
                tcfg,
                &mut rng,
                report.steps,
            )?;
            report.steps += 1;
            let share = batch.len() as f64 * w;
            loss += share * st.loss;
            parts.add_scaled(&st.parts, share);
        }
        let evaluate = tcfg.eval_every > 0
            && !val.is_empty()
            && (epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs);
        let (val_ade, val_fde) = if evaluate {
            let (a, f) = validate(model, val, &sc, &opts)?;
            (Some(a), Some(f))
        } else {
            (None, None)
        };
        let rec = EpochRecord {
            epoch,
            loss,
            parts,
            val_ade,
            val_fde,
        };
        if let Some(out) = log.as_deref_mut() {
            let line = serde_json::to_string(&rec)
                .map_err(|e| Error::Runtime(format!("log record: {e}")))?;
            writeln!(out, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        report.records.push(rec);
    }
    Ok(report)
}
