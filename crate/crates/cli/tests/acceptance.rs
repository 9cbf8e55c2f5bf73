//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! `ACCEPTANCE_ONLY=5,9` restricts the run to the listed criteria; the others
//! print SKIP. The benchmark criteria train real models and take a while.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Result};
use handcast_core::config::{
    DiffusionConfig, HybridPattern, ModelConfig, ScheduleKind, TrainingConfig,
};
use handcast_core::data::synth::{language_instruction, BlockColor};
use handcast_core::data::{cvh_baseline, synth_generate, SynthConfig};
use handcast_core::denoiser::{eam_block, init_scan_block, mdss_scan, selective_scan};
use handcast_core::diffusion::chain::normal_tensor;
use handcast_core::diffusion::{
    dual_forecast, make_schedule, q_sample, reverse_chain, ForecastOptions, Schedule,
};
use handcast_core::evalcli::metrics::states_as_f64;
use handcast_core::evalcli::{
    ade, extract_transitions, fde, mae_transitions, ActionSchedule, EvalReport, PredictionSet,
};
use handcast_core::numerics::{Graph, ParamStore, Tensor};
use handcast_core::pipeline::PreparedClip;
use handcast_core::training::{model_grad_check, train, CheckpointManifest, GradSuiteOptions};
use handcast_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let checks: [(&str, Check); 12] = [
        ("whole-model gradient check", c1_gradients),
        ("scan oracle and causality", c2_scans),
        ("diffusion invariants", c3_diffusion),
        ("metric oracles", c4_metrics),
        ("reach skill vs CVH", c5_reach_skill),
        ("EMF ablation direction", c6_emf_ablation),
        ("target indicators", c7_targets),
        ("TAT discrimination", c8_language),
        ("interaction-state MAE", c9_states),
        ("hybrid patterns", c10_patterns),
        ("reproducibility", c11_reproducible),
        ("CLI pipeline", c12_cli),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("criterion {n:>2} SKIP {name}");
            continue;
        }
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(check)
            .unwrap_or_else(|_| Err(anyhow!("panicked")))
            .unwrap_or_else(|e| Outcome {
                pass: false,
                detail: format!("error: {e:#}"),
            });
        if !res.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {} ({:.0} s)",
            if res.pass { "PASS" } else { "FAIL" },
            res.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Shared benchmark plumbing

struct Bench {
    model: Model,
    test: Vec<PreparedClip>,
    sc: Schedule,
    dcfg: DiffusionConfig,
    train_time: Duration,
}

struct Setup {
    scenario: &'static str,
    n_train: usize,
    n_test: usize,
    epochs: usize,
    seed: u64,
    model: ModelConfig,
    lr: Option<f64>,
}

impl Setup {
    fn new(scenario: &'static str, f: usize, n_train: usize, epochs: usize) -> Self {
        Self {
            scenario,
            n_train,
            n_test: 50,
            epochs,
            seed: 0,
            model: ModelConfig {
                latent_dim: f,
                feature_dim: f,
                ..Default::default()
            },
            lr: None,
        }
    }

    fn synth(&self) -> SynthConfig {
        SynthConfig {
            scenario: self.scenario.into(),
            ..Default::default()
        }
    }

    fn prepare(
        &self,
        count: usize,
        data_seed: u64,
        dcfg: &DiffusionConfig,
    ) -> Result<Vec<PreparedClip>> {
        Ok(synth_generate(&self.synth(), count, data_seed)?
            .iter()
            .map(|c| PreparedClip::new(c, &self.model, dcfg))
            .collect::<handcast_core::Result<Vec<_>>>()?)
    }

    /// Train and test sets come from disjoint dataset seeds.
    fn fit(&self) -> Result<Bench> {
        let dcfg = DiffusionConfig::default();
        let train_set = self.prepare(self.n_train, 1 + 10 * self.seed, &dcfg)?;
        let test = self.prepare(self.n_test, 2 + 10 * self.seed, &dcfg)?;
        let t0 = Instant::now();
        let mut model = Model::new(self.model.clone(), self.seed)?;
        let mut tcfg = TrainingConfig {
            epochs: self.epochs,
            seed: self.seed,
            ..Default::default()
        };
        if let Some(lr) = self.lr {
            tcfg.lr = lr;
        }
        if self.scenario != "pick-place" {
            tcfg.weights.int = 0.0;
        }
        train(&mut model, &train_set, &[], &dcfg, &tcfg, None)?;
        let train_time = t0.elapsed();
        let sc = make_schedule(dcfg.steps, dcfg.schedule)?;
        Ok(Bench {
            model,
            test,
            sc,
            dcfg,
            train_time,
        })
    }
}

impl Bench {
    fn forecast(
        &self,
        p: &PreparedClip,
        target: usize,
        seed: u64,
    ) -> Result<handcast_core::diffusion::Forecast> {
        let opts = ForecastOptions {
            hmf_steps: self.dcfg.hmf_steps,
            seed,
        };
        Ok(dual_forecast(&self.model, p, target, &self.sc, &opts)?)
    }

    fn mean_ade(&self, target: usize) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.test {
            let fc = self.forecast(p, target, 0)?;
            total += ade(&fc.trajectory, &p.future_track(target)?)?;
        }
        Ok(total / self.test.len() as f64)
    }
}

fn cvh_ade(clips: &[PreparedClip], target: usize) -> Result<f64> {
    let mut total = 0.0;
    for p in clips {
        let cv = cvh_baseline(&p.past_track(target)?, p.n_f())?;
        total += ade(&cv, &p.future_track(target)?)?;
    }
    Ok(total / clips.len() as f64)
}

fn row_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn mean_row_dist(a: &Tensor, b: &Tensor) -> f64 {
    (0..a.rows())
        .map(|t| row_dist(a.row(t), b.row(t)))
        .sum::<f64>()
        / a.rows() as f64
}

// ---------------------------------------------------------------------------
// 1

fn c1_gradients() -> Result<Outcome> {
    let t0 = Instant::now();
    let rep = model_grad_check(&GradSuiteOptions::default())?;
    let secs = t0.elapsed().as_secs_f64();
    let entries: usize = rep.params.iter().map(|p| p.entries_checked).sum();
    outcome(
        rep.passed() && secs < 60.0,
        format!(
            "max rel error {:.2e} (tol {:.0e}) over {} tensors / {entries} entries, {secs:.1} s (limit 60 s)",
            rep.max_rel_error,
            rep.tol,
            rep.params.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2

fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// The recurrence written out per channel and state, parameters read by name.
fn scan_oracle(store: &ParamStore, prefix: &str, u: &Tensor, sel: &Tensor) -> Vec<f64> {
    let p = |s: &str| store.value(&format!("{prefix}.{s}")).unwrap().clone();
    let (wd, bd, wb, wc, a_log, d) = (
        p("delta.w"),
        p("delta.b"),
        p("bsel.w"),
        p("csel.w"),
        p("a_log"),
        p("d"),
    );
    let (t_len, f) = (u.rows(), u.cols());
    let (sw, n) = (sel.cols(), a_log.cols());
    let mut h = vec![vec![0.0; n]; f];
    let mut y = vec![0.0; t_len * f];
    for t in 0..t_len {
        let x = sel.row(t);
        let proj = |w: &Tensor, j: usize| (0..sw).map(|i| x[i] * w.get2(i, j)).sum::<f64>();
        let bt: Vec<f64> = (0..n).map(|j| proj(&wb, j)).collect();
        let ct: Vec<f64> = (0..n).map(|j| proj(&wc, j)).collect();
        for ch in 0..f {
            let dt = softplus(proj(&wd, ch) + bd.data()[ch]);
            let ut = u.get2(t, ch);
            let mut out = d.data()[ch] * ut;
            for s in 0..n {
                let a = -a_log.get2(ch, s).exp();
                h[ch][s] = (dt * a).exp() * h[ch][s] + dt * bt[s] * ut;
                out += ct[s] * h[ch][s];
            }
            y[t * f + ch] = out;
        }
    }
    y
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn c2_scans() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let t_len = rng.gen_range(1..=16);
        let f = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=4);
        let em_w = if i % 2 == 0 { 0 } else { rng.gen_range(1..=8) };
        let mut store = ParamStore::new();
        init_scan_block(&mut store, "s", f, em_w, n, &mut rng);
        let u = randn(t_len, f, &mut rng);
        let mut g = Graph::new();
        let uv = g.constant(u.clone());
        let (out, sel) = if em_w == 0 {
            (selective_scan(&mut g, &store, "s", uv)?, u.clone())
        } else {
            let em = randn(t_len, em_w, &mut rng);
            let ev = g.constant(em.clone());
            let rows: Vec<Vec<f64>> = (0..t_len).map(|t| [u.row(t), em.row(t)].concat()).collect();
            (
                mdss_scan(&mut g, &store, "s", uv, ev)?,
                Tensor::from_rows(&rows)?,
            )
        };
        worst = worst.max(max_diff(
            g.value(out).data(),
            &scan_oracle(&store, "s", &u, &sel),
        ));
    }

    // Perturbing inputs after frame k must leave outputs up to k bit-identical.
    let mut causal = true;
    for trial in 0..10 {
        let t_len = rng.gen_range(2..=12);
        let f = rng.gen_range(1..=6);
        let mut store = ParamStore::new();
        init_scan_block(&mut store, "m", f, f, 3, &mut rng);
        let hm = randn(t_len, f, &mut rng);
        let em = randn(t_len, f, &mut rng);
        let run = |hm: &Tensor, em: &Tensor| -> Result<(Tensor, Tensor)> {
            let mut g = Graph::new();
            let (h, e) = (g.constant(hm.clone()), g.constant(em.clone()));
            let y = mdss_scan(&mut g, &store, "m", h, e)?;
            let b = eam_block(&mut g, &store, "m", h, e)?;
            Ok((g.value(y).clone(), g.value(b).clone()))
        };
        let (base, base_block) = run(&hm, &em)?;
        for k in 0..t_len {
            let mut hm2 = hm.clone();
            let mut em2 = em.clone();
            for t in k + 1..t_len {
                hm2.row_mut(t)
                    .iter_mut()
                    .for_each(|v| *v = -*v + 0.3 * trial as f64);
                em2.row_mut(t).iter_mut().for_each(|v| *v += 0.7);
            }
            let (y, b) = run(&hm2, &em2)?;
            let keep = (k + 1) * f;
            causal &= y.data()[..keep] == base.data()[..keep];
            causal &= b.data()[..keep] == base_block.data()[..keep];
        }
    }
    outcome(
        worst <= 1e-10 && causal,
        format!(
            "max deviation {worst:.2e} over 200 instances (tol 1e-10); causal bitwise: {causal}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3

fn c3_diffusion() -> Result<Outcome> {
    let sc = make_schedule(200, ScheduleKind::Sqrt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    let anchor = normal_tensor(6, 5, &mut rng);
    let mut anchored = true;
    let mut seen = 0;
    let mut pred_rng = ChaCha8Rng::seed_from_u64(304);
    reverse_chain(
        &anchor,
        4,
        &sc,
        20,
        |z, _| {
            let n = normal_tensor(z.rows(), z.cols(), &mut pred_rng);
            z.zip_map(&n, |a, b| 0.5 * a + b)
        },
        |_, z| {
            anchored &= z.data()[..30] == *anchor.data();
            seen += 1;
        },
        &mut rng,
    )?;
    anchored &= seen == 21;

    // Unit-variance clean latents keep the marginal variance at 1; constant
    // ones isolate the noise share 1 - abar_s.
    let n = 10_000;
    let mut worst_var = 0.0f64;
    for s in [sc.steps, sc.steps / 2, 10] {
        let z0 = normal_tensor(n + 1, 1, &mut rng);
        let noise = normal_tensor(n, 1, &mut rng);
        let zs = q_sample(&z0, 1, s, &noise, &sc)?;
        worst_var = worst_var.max((sample_var(&zs.data()[1..]) - 1.0).abs());
        let c = Tensor::full(&[n, 1], 0.3);
        let noise = normal_tensor(n, 1, &mut rng);
        let zs = q_sample(&c, 0, s, &noise, &sc)?;
        worst_var = worst_var.max((sample_var(zs.data()) - (1.0 - sc.alpha_bar[s])).abs());
    }

    let z0 = normal_tensor(10, 6, &mut rng);
    let past = z0.slice_rows(0, 6)?;
    let mut exact = true;
    for steps in [1, 7, 20, 200] {
        let out = reverse_chain(
            &past,
            4,
            &sc,
            steps,
            |_, _| Ok(z0.clone()),
            |_, _| {},
            &mut rng,
        )?;
        exact &= out == z0;
    }
    outcome(
        anchored && worst_var <= 0.05 && exact,
        format!(
            "anchor bitwise over 20 steps: {anchored}; worst variance gap {worst_var:.4} (tol 0.05); oracle chain exact: {exact}"
        ),
    )
}

fn sample_var(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

// ---------------------------------------------------------------------------
// 4

/// Transitions from adjacent pairs of the zero-padded sequence, matched
/// greedily per kind with explicit used flags.
fn brute_mae(pred: &[u8], gt: &[u8], n_f: usize) -> Option<f64> {
    let events = |s: &[u8]| -> Vec<(usize, u8)> {
        let padded: Vec<u8> = std::iter::once(0).chain(s.iter().copied()).collect();
        padded
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] != w[1])
            .map(|(i, w)| (i + 1, w[1]))
            .collect()
    };
    let (p, g) = (events(pred), events(gt));
    if g.is_empty() {
        return None;
    }
    let mut used = vec![false; p.len()];
    let (mut total, mut count) = (0.0, 0.0);
    for &(gf, gk) in &g {
        count += 1.0;
        match (0..p.len()).find(|&i| !used[i] && p[i].1 == gk) {
            Some(i) => {
                used[i] = true;
                total += (p[i].0 as f64 - gf as f64).abs();
            }
            None => total += n_f as f64,
        }
    }
    let unpaired = used.iter().filter(|u| !**u).count() as f64;
    Some((total + unpaired * n_f as f64) / (count + unpaired))
}

fn c4_metrics() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut agree = true;
    for case in 0..1000 {
        let n = rng.gen_range(1..25);
        let d = 2 + case % 2;
        let p = Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let g = Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let errs: Vec<f64> = (0..n).map(|t| row_dist(p.row(t), g.row(t))).collect();
        worst = worst.max((ade(&p, &g)? - errs.iter().sum::<f64>() / n as f64).abs());
        worst = worst.max((fde(&p, &g)? - errs[n - 1]).abs());

        let ps: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let gs: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let got = mae_transitions(
            &extract_transitions(&states_as_f64(&ps), 0.5),
            &extract_transitions(&states_as_f64(&gs), 0.5),
            n,
        );
        match (got, brute_mae(&ps, &gs, n)) {
            (None, None) => {}
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            _ => agree = false,
        }
    }
    outcome(
        agree && worst <= 1e-12,
        format!("1000 cases, max deviation {worst:.2e} (tol 1e-12), defined-ness agrees: {agree}"),
    )
}

// ---------------------------------------------------------------------------
// 5

const REACH_EPOCHS: usize = 600;

/// Held-out ADE of the seed-0 reach model, shared with the EMF ablation,
/// whose EMF-on seed-0 run is the same model.
static REACH_SEED0_ADE: Mutex<Option<f64>> = Mutex::new(None);

fn reach_setup(seed: u64, emf: bool) -> Setup {
    let mut setup = Setup::new("reach", 64, 200, REACH_EPOCHS);
    setup.seed = seed;
    setup.model.emf = emf;
    setup
}

fn c5_reach_skill() -> Result<Outcome> {
    let t0 = Instant::now();
    let bench = reach_setup(0, true).fit()?;
    let model_ade = bench.mean_ade(0)?;
    let total = t0.elapsed().as_secs_f64();
    *REACH_SEED0_ADE.lock().unwrap() = Some(model_ade);
    let base = cvh_ade(&bench.test, 0)?;
    let ratio = model_ade / base;
    outcome(
        ratio <= 0.7 && total <= 900.0,
        format!(
            "ADE {model_ade:.4} vs CVH {base:.4}, ratio {ratio:.3} (limit 0.7); train {:.0} s, total {total:.0} s (limit 900 s)",
            bench.train_time.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6

/// Same benchmark as criterion 5. Smaller models (f=32, 100 clips) do not
/// beat CVH yet, and at that scale the comparison is seed noise.
fn c6_emf_ablation() -> Result<Outcome> {
    let mut on = Vec::new();
    let mut off = Vec::new();
    for seed in 0..3 {
        for emf in [true, false] {
            let cached = if seed == 0 && emf {
                *REACH_SEED0_ADE.lock().unwrap()
            } else {
                None
            };
            let a = match cached {
                Some(a) => a,
                None => reach_setup(seed, emf).fit()?.mean_ade(0)?,
            };
            if emf {
                on.push(a)
            } else {
                off.push(a)
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_on, m_off) = (mean(&on), mean(&off));
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|a| format!("{a:.4}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        m_on <= m_off,
        format!(
            "mean ADE EMF on {m_on:.4} [{}] vs off {m_off:.4} [{}]",
            fmt(&on),
            fmt(&off)
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

const TARGET_EPOCHS: usize = 300;
const TARGET_JOINTS: [usize; 3] = [0, 4, 8];

fn c7_targets() -> Result<Outcome> {
    let mut setup = Setup::new("reach", 32, 100, TARGET_EPOCHS);
    setup.model.joint_ids = TARGET_JOINTS.to_vec();
    let joint = setup.fit()?;
    let mut ratios = Vec::new();
    for (k, id) in TARGET_JOINTS.iter().enumerate() {
        let mut single = Setup::new("reach", 32, 100, TARGET_EPOCHS);
        single.model.joint_ids = vec![*id];
        let s = single.fit()?.mean_ade(0)?;
        let j = joint.mean_ade(k)?;
        ratios.push((*id, j, s));
    }

    // Swapping the indicator vs resampling the chain with the same indicator.
    let (mut swap, mut floor) = (0.0, 0.0);
    for p in &joint.test {
        let a = joint.forecast(p, 0, 0)?.trajectory;
        let b = joint.forecast(p, 1, 0)?.trajectory;
        let a2 = joint.forecast(p, 0, 1)?.trajectory;
        swap += mean_row_dist(&a, &b);
        floor += mean_row_dist(&a, &a2);
    }
    let n = joint.test.len() as f64;
    let (swap, floor) = (swap / n, floor / n);
    let within = ratios.iter().all(|(_, j, s)| *j <= 1.1 * s);
    let per = ratios
        .iter()
        .map(|(id, j, s)| format!("joint {id}: {j:.4} vs {s:.4} ({:.2}x)", j / s))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        within && swap > floor,
        format!(
            "{per} (limit 1.1x); indicator swap distance {swap:.4} vs resampling floor {floor:.4}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

const LANGUAGE_EPOCHS: usize = 300;

fn c8_language() -> Result<Outcome> {
    let mut setup = Setup::new("language-pick-place", 32, 100, LANGUAGE_EPOCHS);
    setup.model.pattern = HybridPattern::default().with_tat();
    let bench = setup.fit()?;
    let cfg = &bench.model.config;
    let (mut closer, mut first_gap, mut last_gap) = (0usize, 0.0, 0.0);
    for p in &bench.test {
        let target = p
            .annotations
            .get("instructed_target")
            .ok_or_else(|| anyhow!("no target annotation"))?;
        let distractor = p
            .annotations
            .get("distractor")
            .ok_or_else(|| anyhow!("no distractor annotation"))?;
        let fc = bench.forecast(p, 0, 0)?;
        let end = fc.trajectory.row(fc.trajectory.rows() - 1);
        if row_dist(end, target) < row_dist(end, distractor) {
            closer += 1;
        }
        let blue = bench.forecast(
            &p.with_task(&language_instruction(BlockColor::Blue), cfg),
            0,
            0,
        )?;
        let red = bench.forecast(
            &p.with_task(&language_instruction(BlockColor::Red), cfg),
            0,
            0,
        )?;
        let (b, r) = (&blue.trajectory, &red.trajectory);
        first_gap += row_dist(b.row(0), r.row(0));
        last_gap += row_dist(b.row(b.rows() - 1), r.row(r.rows() - 1));
    }
    let n = bench.test.len() as f64;
    let share = closer as f64 / n;
    let (first_gap, last_gap) = (first_gap / n, last_gap / n);
    outcome(
        share >= 0.8 && last_gap > first_gap,
        format!(
            "final waypoint nearer the instructed block in {closer}/{} clips ({:.0}%, need 80%); blue/red gap first {first_gap:.4} -> last {last_gap:.4}",
            bench.test.len(),
            100.0 * share
        ),
    )
}

// ---------------------------------------------------------------------------
// 9

const STATE_EPOCHS: usize = 300;

fn c9_states() -> Result<Outcome> {
    let setup = Setup::new("pick-place", 32, 100, STATE_EPOCHS);
    let bench = setup.fit()?;
    let (mut total, mut count) = (0.0, 0usize);
    for p in &bench.test {
        let fc = bench.forecast(p, 0, 0)?;
        let gt = p
            .future_states()
            .ok_or_else(|| anyhow!("clip {} has no states", p.id))?;
        let pred = extract_transitions(&fc.states, 0.5);
        if let Some(m) = mae_transitions(
            &pred,
            &extract_transitions(&states_as_f64(gt), 0.5),
            p.n_f(),
        ) {
            total += m;
            count += 1;
        }
    }
    ensure!(count > 0, "no held-out clip has a future transition");
    let mae = total / count as f64;
    outcome(
        mae <= 2.0,
        format!("transition MAE {mae:.3} frames over {count} clips with transitions (limit 2)"),
    )
}

// ---------------------------------------------------------------------------
// 10

fn c10_patterns() -> Result<Outcome> {
    let default_ok = HybridPattern::default().to_string() == "EAM-EAM-SAT";
    let mut notes = Vec::new();
    let mut all = true;
    for pattern in HybridPattern::standard() {
        let mut setup = Setup::new("language-pick-place", 8, 4, 1);
        setup.model.pattern = pattern.clone();
        setup.model.heads = 2;
        setup.model.d_state = 4;
        let dcfg = DiffusionConfig::default();
        let clips = setup.prepare(4, 5, &dcfg)?;
        let mut model = Model::new(setup.model.clone(), 0)?;
        let tcfg = TrainingConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        let rep = train(&mut model, &clips, &[], &dcfg, &tcfg, None);
        let finite = match &rep {
            Ok(r) => !r.records.is_empty() && r.records.iter().all(|e| e.loss.is_finite()),
            Err(_) => false,
        };
        all &= finite;
        notes.push(format!(
            "{pattern}: {}",
            if finite { "finite" } else { "FAILED" }
        ));
    }
    outcome(
        all && default_ok,
        format!("{}; default EAM-EAM-SAT: {default_ok}", notes.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 11 and 12 drive the binary

const SMALL: &str = r#"{
  "synth": {"scenario": "pick-place"},
  "splits": {"train": 6, "val": 2, "test": 3},
  "model": {"latent_dim": 8, "feature_dim": 8, "heads": 2, "d_state": 4},
  "diffusion": {"steps": 20, "hmf_steps": 5},
  "training": {"epochs": 3, "batch_size": 3, "eval_every": 1}
}"#;

fn handcast(args: &[&str]) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_handcast"))
        .args(args)
        .output()?;
    if !out.status.success() {
        bail!(
            "handcast {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        );
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// synth, train, infer, eval and export-actions under `root`.
fn pipeline(root: &Path, seed: &str) -> Result<()> {
    fs::write(root.join("cfg.json"), SMALL)?;
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let cfg = p("cfg.json");
    let base = ["--config", cfg.as_str(), "--seed", seed];
    let with =
        |rest: &[&str]| -> Vec<String> { base.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| handcast(&args.iter().map(String::as_str).collect::<Vec<_>>());
    run(with(&["synth", "--out", &p("data")]))?;
    run(with(&["train", "--data", &p("data"), "--out", &p("ckpt")]))?;
    run(with(&[
        "infer",
        "--data",
        &p("data"),
        "--checkpoint",
        &p("ckpt"),
        "--out",
        &p("infer"),
    ]))?;
    run(with(&[
        "eval",
        "--predictions",
        &p("infer/predictions.json"),
        "--data",
        &p("data"),
        "--out",
        &p("eval"),
    ]))?;
    run(with(&[
        "export-actions",
        "--predictions",
        &p("infer/predictions.json"),
        "--out",
        &p("export"),
    ]))?;
    Ok(())
}

/// Relative path to bytes for every file below `dir`.
fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir)?.to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path)?);
            }
        }
    }
    Ok(out)
}

fn c11_reproducible() -> Result<Outcome> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    pipeline(a.path(), "11")?;
    pipeline(b.path(), "11")?;
    let mut same = true;
    let mut files = 0;
    for sub in ["ckpt", "eval"] {
        let (x, y) = (
            snapshot(&a.path().join(sub))?,
            snapshot(&b.path().join(sub))?,
        );
        ensure!(!x.is_empty(), "{sub} is empty");
        files += x.len();
        same &= x == y;
    }
    // A different seed must actually change the weights.
    let c = tempfile::tempdir()?;
    pipeline(c.path(), "12")?;
    let differs = snapshot(&a.path().join("ckpt"))? != snapshot(&c.path().join("ckpt"))?;
    outcome(
        same && differs,
        format!("{files} checkpoint and report files bit-identical: {same}; other seed differs: {differs}"),
    )
}

fn c12_cli() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    pipeline(root, "3")?;
    let read = |p: &Path| -> Result<String> { Ok(fs::read_to_string(p)?) };

    let manifest: CheckpointManifest =
        serde_json::from_str(&read(&root.join("ckpt/manifest.json"))?)?;
    let preds = PredictionSet::load(&root.join("infer/predictions.json"))?;
    let report: EvalReport = serde_json::from_str(&read(&root.join("eval/eval_report.json"))?)?;
    let mut schedules = Vec::new();
    for entry in fs::read_dir(root.join("export/actions"))? {
        let s: ActionSchedule = serde_json::from_str(&read(&entry?.path())?)?;
        schedules.push(s);
    }
    ensure!(
        manifest.format_version == 1,
        "manifest format_version {}",
        manifest.format_version
    );
    ensure!(
        preds.format_version == 1,
        "predictions format_version {}",
        preds.format_version
    );
    ensure!(
        report.format_version == 1,
        "report format_version {}",
        report.format_version
    );
    ensure!(
        report.ade.is_finite() && report.fde.is_finite(),
        "non-finite report metrics"
    );
    ensure!(
        preds.predictions.len() == 3,
        "expected 3 predictions, got {}",
        preds.predictions.len()
    );
    ensure!(
        schedules.len() == 3,
        "expected 3 action schedules, got {}",
        schedules.len()
    );
    ensure!(
        schedules.iter().all(|s| s.format_version == 1),
        "schedule format_version"
    );
    outcome(
        true,
        format!(
            "5 stages exit 0; manifest, {} predictions, report (ADE {:.4}), {} schedules parse with format_version 1",
            preds.predictions.len(),
            report.ade,
            schedules.len()
        ),
    )
}
