//! Command-line front end: synthetic data, training, inference, evaluation
//! and exports.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use handcast_core::data::{load_split, save_dataset, synth_generate, Clip, DimMode, Split};
use handcast_core::diffusion::{make_schedule, ForecastOptions, Schedule};
use handcast_core::evalcli::{
    cvh_all, evaluate, export_action_schedule, export_hm_features, forecast_all,
    ground_truth_from_clips, ground_truth_from_predictions, PredictionSet,
};
use handcast_core::pipeline::PreparedClip;
use handcast_core::training::{
    finetune, load_checkpoint, model_grad_check, save_checkpoint, train, GradSuiteOptions,
};
use handcast_core::{Error, Model};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "handcast",
    about = "Egocentric hand-motion forecasting with dual-branch diffusion"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `training.seed`; also seeds synthesis and forecasting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint to start from; the configured pattern may append a TAT block.
        #[arg(long)]
        finetune_from: Option<PathBuf>,
    },
    /// Forecast every clip of a split.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Use a baseline instead of a model.
        #[arg(long, value_parser = ["cvh"])]
        baseline: Option<String>,
    },
    /// Score predictions against a split's ground truth or another prediction file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, required_unless_present = "reference")]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, conflicts_with = "data")]
        reference: Option<PathBuf>,
    },
    /// Finite-difference check of the full training objective.
    Gradcheck {
        /// Offset every analytic gradient entry to prove the check can fail.
        #[arg(long)]
        corrupt_gradient: bool,
        #[arg(long, default_value_t = 8)]
        latent_dim: usize,
    },
    /// Write a gripper action schedule per clip from 3D predictions.
    ExportActions {
        #[arg(long)]
        predictions: PathBuf,
        /// Joint whose track drives the schedule.
        #[arg(long, default_value_t = 0)]
        joint: usize,
    },
    /// Write the denoised future hand-motion latents per clip and target.
    ExportFeatures {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the per-frame error curve of an evaluation report as CSV.
    PlotErrors {
        #[arg(long)]
        report: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code: 0 on success, 1 on invalid input, 2 on filesystem errors.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return if err.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn out_dir(cli_out: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = cli_out
        .clone()
        .ok_or_else(|| anyhow!("--out is required"))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.training.seed = s;
    }
    let seed = cfg.training.seed;
    match cli.command {
        Command::Synth {
            scenario,
            train,
            val,
            test,
        } => {
            if let Some(s) = scenario {
                cfg.synth.scenario = s;
            }
            let counts = &mut cfg.splits;
            counts.train = train.unwrap_or(counts.train);
            counts.val = val.unwrap_or(counts.val);
            counts.test = test.unwrap_or(counts.test);
            let out = out_dir(&cli.out)?;
            synth(&cfg, seed, &out)
        }
        Command::Train {
            data,
            epochs,
            finetune_from,
        } => {
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            if let Some(f) = finetune_from {
                cfg.training.finetune_from = Some(f.to_string_lossy().into_owned());
            }
            let out = out_dir(&cli.out)?;
            train_cmd(&cfg, seed, &data, &out)
        }
        Command::Infer {
            data,
            checkpoint,
            baseline,
        } => {
            let out = out_dir(&cli.out)?;
            let set = match (checkpoint, baseline) {
                (_, Some(_)) => {
                    let clips = prepare(&load_split(&data.data, data.split.into())?, &cfg)?;
                    PredictionSet::new("cvh", cvh_all(&clips, &cfg.model.joint_ids)?)
                }
                (Some(ck), None) => {
                    let (model, dcfg) = load_checkpoint(&ck)?;
                    cfg.model = model.config.clone();
                    cfg.diffusion = dcfg;
                    let clips = prepare(&load_split(&data.data, data.split.into())?, &cfg)?;
                    let (sc, opts) = forecast_setup(&cfg, seed)?;
                    PredictionSet::new("model", forecast_all(&model, &clips, &sc, &opts)?)
                }
                (None, None) => bail!("infer needs --checkpoint or --baseline"),
            };
            let path = out.join("predictions.json");
            set.save(&path)?;
            println!(
                "wrote {} predictions to {}",
                set.predictions.len(),
                path.display()
            );
            Ok(())
        }
        Command::Eval {
            predictions,
            data,
            split,
            reference,
        } => {
            let preds = PredictionSet::load(&predictions)?;
            let gt = match (reference, data) {
                (Some(r), _) => {
                    ground_truth_from_predictions(&PredictionSet::load(&r)?, cfg.eval.threshold)?
                }
                (None, Some(d)) => {
                    let joints = joints_of(&preds);
                    cfg.model.joint_ids = joints.clone();
                    let clips = prepare(&load_split(&d, split.into())?, &cfg)?;
                    ground_truth_from_clips(&clips, &joints)?
                }
                (None, None) => bail!("eval needs --data or --reference"),
            };
            let echo = serde_json::to_value(&cfg).context("config echo")?;
            let report = evaluate(&preds.predictions, &gt, cfg.eval.threshold, echo)?;
            let out = out_dir(&cli.out)?;
            report.save(&out.join("eval_report.json"))?;
            let mae = report
                .mae
                .map_or("n/a".to_string(), |m| format!("{m:.3} frames"));
            println!(
                "ADE {:.6} FDE {:.6} ({}) MAE {mae} over {} clips",
                report.ade, report.fde, report.units, report.clips
            );
            Ok(())
        }
        Command::Gradcheck {
            corrupt_gradient,
            latent_dim,
        } => {
            let opts = GradSuiteOptions {
                latent_dim,
                corrupt: if corrupt_gradient { 1e-2 } else { 0.0 },
                seed,
                ..Default::default()
            };
            let report = model_grad_check(&opts)?;
            println!(
                "checked {} entries over {} parameters, max relative error {:.3e} (tol {:.0e})",
                report.entries_checked(),
                report.params.len(),
                report.max_rel_error,
                report.tol
            );
            if !report.passed() {
                bail!(Error::Validation(format!(
                    "gradient check failed at {:?}",
                    report.worst
                )));
            }
            Ok(())
        }
        Command::ExportActions { predictions, joint } => {
            let set = PredictionSet::load(&predictions)?;
            let out = out_dir(&cli.out)?.join("actions");
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut n = 0;
            for p in set.predictions.iter().filter(|p| p.joint_id == joint) {
                let tr = p.trajectory_tensor()?;
                let mode = if tr.cols() == 3 {
                    DimMode::Three
                } else {
                    DimMode::Two
                };
                let states = p.states.as_ref().ok_or_else(|| {
                    Error::Validation(format!(
                        "prediction for clip {} carries no interaction states",
                        p.clip_id
                    ))
                })?;
                let sched = export_action_schedule(
                    &p.clip_id,
                    mode,
                    &tr,
                    states,
                    cfg.synth.fps,
                    cfg.eval.threshold,
                )?;
                sched.save(&out.join(format!("{}.json", p.clip_id)))?;
                n += 1;
            }
            if n == 0 {
                bail!(Error::Validation(format!(
                    "no predictions for joint {joint}"
                )));
            }
            println!("wrote {n} action schedules to {}", out.display());
            Ok(())
        }
        Command::ExportFeatures { data, checkpoint } => {
            let (model, dcfg) = load_checkpoint(&checkpoint)?;
            cfg.model = model.config.clone();
            cfg.diffusion = dcfg;
            let clips = prepare(&load_split(&data.data, data.split.into())?, &cfg)?;
            let (sc, opts) = forecast_setup(&cfg, seed)?;
            let out = out_dir(&cli.out)?.join("features");
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for p in &clips {
                for (t, j) in model.config.joint_ids.iter().enumerate() {
                    let path = out.join(format!("{}-j{j}.uhnd", p.id));
                    export_hm_features(&model, p, t, &sc, &opts, &path)?;
                }
            }
            println!(
                "wrote features for {} clips to {}",
                clips.len(),
                out.display()
            );
            Ok(())
        }
        Command::PlotErrors { report } => {
            let r: handcast_core::evalcli::EvalReport =
                handcast_core::data::store::read_json(&report)?;
            let path = out_dir(&cli.out)?.join("error_curve.csv");
            fs::write(&path, r.error_curve_csv()).map_err(|e| Error::io(&path, e))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn joints_of(set: &PredictionSet) -> Vec<usize> {
    let mut j: Vec<usize> = Vec::new();
    for p in &set.predictions {
        if !j.contains(&p.joint_id) {
            j.push(p.joint_id);
        }
    }
    j
}

fn prepare(clips: &[Clip], cfg: &RunConfig) -> anyhow::Result<Vec<PreparedClip>> {
    Ok(clips
        .iter()
        .map(|c| PreparedClip::new(c, &cfg.model, &cfg.diffusion))
        .collect::<Result<Vec<_>, _>>()?)
}

fn forecast_setup(cfg: &RunConfig, seed: u64) -> anyhow::Result<(Schedule, ForecastOptions)> {
    let sc = make_schedule(cfg.diffusion.steps, cfg.diffusion.schedule)?;
    Ok((
        sc,
        ForecastOptions {
            hmf_steps: cfg.diffusion.hmf_steps,
            seed,
        },
    ))
}

fn synth(cfg: &RunConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    let c = &cfg.splits;
    let total = c.train + c.val + c.test;
    let clips = synth_generate(&cfg.synth, total, seed)?;
    let tagged: Vec<(Clip, Split)> = clips
        .into_iter()
        .enumerate()
        .map(|(i, clip)| {
            let split = if i < c.train {
                Split::Train
            } else if i < c.train + c.val {
                Split::Val
            } else {
                Split::Test
            };
            (clip, split)
        })
        .collect();
    save_dataset(out, &tagged)?;
    println!(
        "wrote {total} {} clips to {}",
        cfg.synth.scenario,
        out.display()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, seed: u64, data: &Path, out: &Path) -> anyhow::Result<()> {
    let train_clips = prepare(&load_split(data, Split::Train)?, cfg)?;
    let val_clips = prepare(&load_split(data, Split::Val)?, cfg)?;
    let mut model = match &cfg.training.finetune_from {
        Some(dir) => finetune(Path::new(dir), &cfg.model, seed)?,
        None => Model::new(cfg.model.clone(), seed)?,
    };
    let log_path = out.join("train_log.ndjson");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let report = train(
        &mut model,
        &train_clips,
        &val_clips,
        &cfg.diffusion,
        &cfg.training,
        Some(&mut log),
    )?;
    save_checkpoint(&model, &cfg.diffusion, out)?;
    if let Some(last) = report.records.last() {
        println!(
            "trained {} epochs ({} steps), final loss {:.6}",
            last.epoch, report.steps, last.loss
        );
    }
    Ok(())
}
