use handcast_core::config::{DiffusionConfig, ModelConfig, ScheduleKind};
use handcast_core::data::{synth_generate, SynthConfig};
use handcast_core::diffusion::chain::normal_tensor;
use handcast_core::diffusion::{
    denoise_step, dual_forecast, make_schedule, q_sample, reverse_chain, sample_emf, stride_steps,
    ForecastOptions,
};
use handcast_core::numerics::Tensor;
use handcast_core::pipeline::PreparedClip;
use handcast_core::{Error, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_marginal_variance_matches_the_schedule() {
    let sc = make_schedule(200, ScheduleKind::Sqrt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in [sc.steps, sc.steps / 2, 10] {
        let n = 10_000;
        // Unit-variance clean latents, so the marginal variance is 1 at every step.
        let z0 = normal_tensor(n + 1, 1, &mut rng);
        let noise = normal_tensor(n, 1, &mut rng);
        let zs = q_sample(&z0, 1, s, &noise, &sc).unwrap();
        let fut = &zs.data()[1..];
        let mean = fut.iter().sum::<f64>() / n as f64;
        let var = fut.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() <= 0.05, "step {s}: variance {var}");
        assert_eq!(zs.row(0), z0.row(0));
    }
    // Constant clean latents isolate the noise share 1 - abar_s.
    let n = 10_000;
    let z0 = Tensor::full(&[n, 1], 0.3);
    let noise = normal_tensor(n, 1, &mut rng);
    let zs = q_sample(&z0, 0, sc.steps, &noise, &sc).unwrap();
    let mean = zs.data().iter().sum::<f64>() / n as f64;
    let var = zs
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    assert!((var - (1.0 - sc.alpha_bar[sc.steps])).abs() <= 0.05);
}

#[test]
fn q_sample_rejects_mismatched_noise() {
    let sc = make_schedule(10, ScheduleKind::Sqrt).unwrap();
    let z0 = Tensor::zeros(&[5, 3]);
    let noise = Tensor::zeros(&[3, 3]);
    assert!(matches!(
        q_sample(&z0, 1, 4, &noise, &sc),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn anchor_rows_survive_a_full_twenty_step_chain_bitwise() {
    let sc = make_schedule(200, ScheduleKind::Sqrt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let anchor = normal_tensor(6, 5, &mut rng);
    let mut seen = 0;
    let mut pred_rng = ChaCha8Rng::seed_from_u64(3);
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
            assert_eq!(&z.data()[..30], anchor.data());
            seen += 1;
        },
        &mut rng,
    )
    .unwrap();
    assert_eq!(seen, 21);
}

#[test]
fn oracle_predictor_recovers_clean_latents_exactly() {
    let sc = make_schedule(200, ScheduleKind::Sqrt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z0 = normal_tensor(10, 6, &mut rng);
    let anchor = z0.slice_rows(0, 6).unwrap();
    for steps in [1, 7, 20, 200] {
        let out = reverse_chain(
            &anchor,
            4,
            &sc,
            steps,
            |_, _| Ok(z0.clone()),
            |_, _| {},
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, z0, "{steps} steps");
    }
}

#[test]
fn final_step_is_deterministic_and_non_finite_predictions_fail() {
    let sc = make_schedule(50, ScheduleKind::Linear).unwrap();
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(6);
    let zs = normal_tensor(4, 3, &mut r1);
    let z0 = normal_tensor(4, 3, &mut r1);
    let anchor = z0.slice_rows(0, 2).unwrap();
    let a = denoise_step(&zs, &z0, &anchor, 1, 0, &sc, &mut r1).unwrap();
    let b = denoise_step(&zs, &z0, &anchor, 1, 0, &sc, &mut r2).unwrap();
    assert_eq!(a, b);
    let bad = z0.map(|v| v / 0.0);
    match denoise_step(&zs, &bad, &anchor, 9, 8, &sc, &mut r1) {
        Err(Error::Runtime(m)) => assert!(m.contains('9'), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stride_subsequence_is_uniform_and_bounded() {
    assert_eq!(stride_steps(200, 20).unwrap().first(), Some(&200));
    assert_eq!(stride_steps(200, 20).unwrap().last(), Some(&10));
    assert_eq!(stride_steps(1000, 100).unwrap()[1], 990);
    assert_eq!(stride_steps(5, 5).unwrap(), vec![5, 4, 3, 2, 1]);
    assert_eq!(stride_steps(200, 1).unwrap(), vec![200]);
    assert!(stride_steps(5, 6).is_err());
}

#[test]
fn emf_sample_keeps_the_past_and_appends_the_horizon() {
    let sc = make_schedule(30, ScheduleKind::Sqrt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let past = normal_tensor(6, 4, &mut rng);
    let mut calls = vec![];
    let out = sample_emf(
        &past,
        4,
        &sc,
        |z, s| {
            calls.push(s);
            Ok(z.map(|v| v * 0.1))
        },
        &mut rng,
    )
    .unwrap();
    assert_eq!(calls, vec![30]);
    assert_eq!(out.shape(), &[10, 4]);
    assert_eq!(out.slice_rows(0, 6).unwrap(), past);
}

fn tiny() -> (ModelConfig, DiffusionConfig) {
    (
        ModelConfig {
            latent_dim: 8,
            feature_dim: 8,
            heads: 2,
            d_state: 3,
            joint_ids: vec![0, 4],
            ..Default::default()
        },
        DiffusionConfig {
            steps: 20,
            hmf_steps: 5,
            ..Default::default()
        },
    )
}

#[test]
fn forecasts_are_pure_functions_of_weights_clip_and_seed() {
    let (cfg, dcfg) = tiny();
    let clips = synth_generate(&SynthConfig::default(), 2, 3).unwrap();
    let model = Model::new(cfg.clone(), 0).unwrap();
    let sc = make_schedule(dcfg.steps, dcfg.schedule).unwrap();
    let p = PreparedClip::new(&clips[0], &cfg, &dcfg).unwrap();
    let opts = ForecastOptions {
        hmf_steps: 5,
        seed: 9,
    };
    let a = dual_forecast(&model, &p, 1, &sc, &opts).unwrap();
    let b = dual_forecast(&model, &p, 1, &sc, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectory.shape(), &[p.n_f(), 3]);
    assert_eq!(a.hm_future.shape(), &[p.n_f(), 8]);
    let c = dual_forecast(&model, &p, 1, &sc, &ForecastOptions { seed: 10, ..opts }).unwrap();
    assert_ne!(a.trajectory, c.trajectory);
}

#[test]
fn emf_off_holds_the_last_observed_egomotion() {
    let (mut cfg, dcfg) = tiny();
    cfg.emf = false;
    let clips = synth_generate(&SynthConfig::default(), 1, 3).unwrap();
    let model = Model::new(cfg.clone(), 0).unwrap();
    let sc = make_schedule(dcfg.steps, dcfg.schedule).unwrap();
    let p = PreparedClip::new(&clips[0], &cfg, &dcfg).unwrap();
    let f = dual_forecast(
        &model,
        &p,
        0,
        &sc,
        &ForecastOptions {
            hmf_steps: 5,
            seed: 0,
        },
    )
    .unwrap();
    let last = f.em.row(p.n_p() - 1).to_vec();
    for t in p.n_p()..p.n_p() + p.n_f() {
        assert_eq!(f.em.row(t), last.as_slice());
    }
}

#[test]
fn hat_mode_uses_one_observed_frame() {
    let (mut cfg, dcfg) = tiny();
    cfg.hat_mode = true;
    let synth = SynthConfig {
        fixed_camera: true,
        ..Default::default()
    };
    let clips = synth_generate(&synth, 1, 4).unwrap();
    let p = PreparedClip::new(&clips[0], &cfg, &dcfg).unwrap();
    assert_eq!(p.n_p(), 1);
    assert_eq!(p.n_f(), clips[0].frames() - 1);
    let model = Model::new(cfg, 0).unwrap();
    let sc = make_schedule(dcfg.steps, dcfg.schedule).unwrap();
    let f = dual_forecast(
        &model,
        &p,
        0,
        &sc,
        &ForecastOptions {
            hmf_steps: 5,
            seed: 0,
        },
    )
    .unwrap();
    assert_eq!(f.trajectory.rows(), p.n_f());
}

#[test]
fn two_d_mode_forecasts_normalized_two_vectors() {
    let (mut cfg, dcfg) = tiny();
    cfg.mode = handcast_core::data::DimMode::Two;
    cfg.voxels = false;
    let synth = SynthConfig {
        mode: handcast_core::data::DimMode::Two,
        ..Default::default()
    };
    let clips = synth_generate(&synth, 1, 5).unwrap();
    let p = PreparedClip::new(&clips[0], &cfg, &dcfg).unwrap();
    let model = Model::new(cfg, 0).unwrap();
    let sc = make_schedule(dcfg.steps, dcfg.schedule).unwrap();
    let f = dual_forecast(
        &model,
        &p,
        0,
        &sc,
        &ForecastOptions {
            hmf_steps: 5,
            seed: 0,
        },
    )
    .unwrap();
    assert_eq!(f.trajectory.cols(), 2);
}
