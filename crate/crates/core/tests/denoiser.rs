use handcast_core::config::{BlockKind, HybridPattern, ModelConfig};
use handcast_core::denoiser::{
    decode_states, decode_trajectory, eam_block, emf_denoiser, hmtm_forward, init_attention,
    init_scan_block, init_transformer_block, mdss_scan, mhca, mhsa, sat_block, scan_block,
    selective_scan, tat_block, Conditioning,
};
use handcast_core::numerics::nn::time_code;
use handcast_core::numerics::{grad_check, GradCheckOptions, Graph, ParamStore, Tensor};
use handcast_core::{Error, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

/// Step-by-step recurrence straight from the definition, reading the block's
/// parameters by name.
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

#[test]
fn scans_match_the_naive_recurrence_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let t_len = rng.gen_range(1..=16);
        let f = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=4);
        let mut store = ParamStore::new();
        let em_w = if i % 2 == 0 { 0 } else { rng.gen_range(1..=8) };
        init_scan_block(&mut store, "s", f, em_w, n, &mut rng);
        let u = randn(t_len, f, &mut rng);
        let mut g = Graph::new();
        let uv = g.constant(u.clone());
        let (out, sel) = if em_w == 0 {
            (selective_scan(&mut g, &store, "s", uv).unwrap(), u.clone())
        } else {
            let em = randn(t_len, em_w, &mut rng);
            let ev = g.constant(em.clone());
            let sel = Tensor::from_rows(
                &(0..t_len)
                    .map(|t| [u.row(t), em.row(t)].concat())
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            (mdss_scan(&mut g, &store, "s", uv, ev).unwrap(), sel)
        };
        let want = scan_oracle(&store, "s", &u, &sel);
        worst = worst.max(max_diff(g.value(out).data(), &want));
    }
    assert!(worst <= 1e-10, "max deviation {worst:e}");
}

#[test]
fn single_step_scan_has_no_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    init_scan_block(&mut store, "s", 3, 0, 2, &mut rng);
    let u = randn(1, 3, &mut rng);
    let mut g = Graph::new();
    let uv = g.constant(u.clone());
    let y = selective_scan(&mut g, &store, "s", uv).unwrap();
    let want = scan_oracle(&store, "s", &u, &u);
    assert!(max_diff(g.value(y).data(), &want) < 1e-12);
}

#[test]
fn scans_are_causal_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t_len, f) = (9, 4);
    let mut store = ParamStore::new();
    init_scan_block(&mut store, "m", f, f, 3, &mut rng);
    let hm = randn(t_len, f, &mut rng);
    let em = randn(t_len, f, &mut rng);
    let run = |hm: &Tensor, em: &Tensor| {
        let mut g = Graph::new();
        let (h, e) = (g.constant(hm.clone()), g.constant(em.clone()));
        let y = mdss_scan(&mut g, &store, "m", h, e).unwrap();
        let b = eam_block(&mut g, &store, "m", h, e).unwrap();
        (g.value(y).clone(), g.value(b).clone())
    };
    let (base, base_block) = run(&hm, &em);
    for k in 0..t_len {
        let mut hm2 = hm.clone();
        let mut em2 = em.clone();
        for t in k + 1..t_len {
            hm2.row_mut(t).fill(0.0);
        }
        for t in k..t_len {
            em2.row_mut(t).iter_mut().for_each(|v| *v += 0.7);
        }
        let (y, b) = run(&hm2, &em);
        assert_eq!(&y.data()[..(k + 1) * f], &base.data()[..(k + 1) * f]);
        assert_eq!(&b.data()[..(k + 1) * f], &base_block.data()[..(k + 1) * f]);
        let (y, _) = run(&hm, &em2);
        assert_eq!(
            &y.data()[..k * f],
            &base.data()[..k * f],
            "em perturbation at {k} leaked backwards"
        );
    }
}

#[test]
fn mdss_reduces_to_vanilla_scan_with_zero_em_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t_len, f) = (7, 5);
    let mut store = ParamStore::new();
    init_scan_block(&mut store, "m", f, f, 3, &mut rng);
    let mut vanilla = ParamStore::new();
    for (name, p) in store.iter() {
        let v = if [".delta.w", ".bsel.w", ".csel.w"]
            .iter()
            .any(|s| name.ends_with(s))
        {
            p.value.slice_rows(0, f).unwrap()
        } else {
            p.value.clone()
        };
        vanilla.insert(name.clone(), v);
    }
    let hm = randn(t_len, f, &mut rng);
    let mut g = Graph::new();
    let h = g.constant(hm.clone());
    let z = g.constant(Tensor::zeros(&[t_len, f]));
    let a = mdss_scan(&mut g, &store, "m", h, z).unwrap();
    // Parameter nodes are cached per graph, so the other store gets its own.
    let mut g2 = Graph::new();
    let h2 = g2.constant(hm);
    let b = selective_scan(&mut g2, &vanilla, "m", h2).unwrap();
    assert!(max_diff(g.value(a).data(), g2.value(b).data()) < 1e-14);
    let short = g.constant(Tensor::zeros(&[t_len - 1, f]));
    assert!(matches!(
        mdss_scan(&mut g, &store, "m", h, short),
        Err(Error::Validation(_))
    ));
}

#[test]
fn zero_output_projection_makes_scan_blocks_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    init_scan_block(&mut store, "b", 4, 4, 2, &mut rng);
    store.get_mut("b.out.w").unwrap().value = Tensor::zeros(&[4, 4]);
    let x = randn(6, 4, &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let em = g.constant(randn(6, 4, &mut rng));
    let y = eam_block(&mut g, &store, "b", xv, em).unwrap();
    assert_eq!(g.value(y), &x);
    let mut vstore = ParamStore::new();
    init_scan_block(&mut vstore, "v", 4, 0, 2, &mut rng);
    vstore.get_mut("v.out.w").unwrap().value = Tensor::zeros(&[4, 4]);
    let y = scan_block(&mut g, &vstore, "v", xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn attention_rows_sum_to_one_and_single_step_is_the_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    init_attention(&mut store, "a", 8, 8, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(randn(7, 8, &mut rng));
    let (_, weights) = mhsa(&mut g, &store, "a", x, &time_code(7, 8), 4).unwrap();
    for w in weights {
        for r in 0..7 {
            let s: f64 = g.value(w).row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
    let one = randn(1, 8, &mut rng);
    let ov = g.constant(one.clone());
    let code = Tensor::zeros(&[1, 8]);
    let (y, _) = mhsa(&mut g, &store, "a", ov, &code, 2).unwrap();
    let want = one
        .matmul(store.value("a.v.w").unwrap())
        .unwrap()
        .matmul(store.value("a.o.w").unwrap())
        .unwrap();
    assert!(max_diff(g.value(y).data(), want.data()) < 1e-12);
    assert!(matches!(
        mhsa(&mut g, &store, "a", x, &time_code(7, 8), 3),
        Err(Error::Config(_))
    ));
}

#[test]
fn cross_attention_ignores_kv_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    init_attention(&mut store, "c", 8, 6, &mut rng);
    let kv = randn(27, 6, &mut rng);
    let mut perm: Vec<usize> = (0..27).collect();
    for i in (1..27).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let shuffled =
        Tensor::from_rows(&perm.iter().map(|&i| kv.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let mut g = Graph::new();
    let q = g.constant(randn(5, 8, &mut rng));
    let (k1, k2) = (g.constant(kv), g.constant(shuffled));
    let (a, _) = mhca(&mut g, &store, "c", q, k1, 2).unwrap();
    let (b, _) = mhca(&mut g, &store, "c", q, k2, 2).unwrap();
    assert!(max_diff(g.value(a).data(), g.value(b).data()) < 1e-12);
}

#[test]
fn transformer_blocks_preserve_shape_and_tat_sees_the_task() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (f, x) = (8, 6);
    let mut store = ParamStore::new();
    init_transformer_block(&mut store, "sat", f, f, &mut rng);
    init_transformer_block(&mut store, "tat", f, x, &mut rng);
    let mut g = Graph::new();
    let hm = g.constant(randn(10, f, &mut rng));
    let vox = g.constant(randn(27, f, &mut rng));
    let y = sat_block(&mut g, &store, "sat", hm, vox, 2).unwrap();
    assert_eq!(g.shape(y), &[10, f]);
    let t1 = g.constant(randn(1, x, &mut rng));
    let t2 = g.constant(randn(1, x, &mut rng));
    let a = tat_block(&mut g, &store, "tat", hm, t1, 2).unwrap();
    let b = tat_block(&mut g, &store, "tat", hm, t2, 2).unwrap();
    assert_eq!(g.shape(a), &[10, f]);
    assert!(max_diff(g.value(a).data(), g.value(b).data()) > 1e-6);
}

fn small_cfg(pattern: &str) -> ModelConfig {
    ModelConfig {
        latent_dim: 8,
        feature_dim: 8,
        heads: 2,
        d_state: 3,
        pattern: pattern.parse().unwrap(),
        ..Default::default()
    }
}

#[test]
fn every_standard_pattern_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let patterns: Vec<HybridPattern> = HybridPattern::standard().into_iter().collect();
    assert_eq!(HybridPattern::default().to_string(), "EAM-EAM-SAT");
    for p in patterns
        .iter()
        .chain([HybridPattern::default().with_tat()].iter())
    {
        let cfg = small_cfg(&p.to_string());
        let model = Model::new(cfg.clone(), 1).unwrap();
        let mut g = Graph::new();
        let z = g.constant(randn(10, 8, &mut rng));
        let cond = Conditioning {
            em: g.constant(randn(10, 8, &mut rng)),
            voxels: Some(g.constant(randn(27, 8, &mut rng))),
            task: p.has_tat().then(|| g.constant(randn(1, 8, &mut rng))),
        };
        let y = hmtm_forward(&mut g, &model.params, &cfg, z, &cond, 5).unwrap();
        assert_eq!(g.shape(y), &[10, 8], "pattern {p}");
        let e = emf_denoiser(&mut g, &model.params, z, 7).unwrap();
        assert_eq!(g.shape(e), &[10, 8]);
    }
}

#[test]
fn tat_without_a_task_is_a_config_error() {
    let cfg = small_cfg("EAM-SAT-TAT");
    let model = Model::new(cfg.clone(), 1).unwrap();
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[4, 8]));
    let cond = Conditioning {
        em: z,
        voxels: None,
        task: None,
    };
    assert!(matches!(
        hmtm_forward(&mut g, &model.params, &cfg, z, &cond, 1),
        Err(Error::Config(_))
    ));
    assert!(cfg.pattern.blocks().contains(&BlockKind::Tat));
}

#[test]
fn decoders_emit_mode_width_and_open_interval_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (mode, w) in [
        (handcast_core::data::DimMode::Two, 2),
        (handcast_core::data::DimMode::Three, 3),
    ] {
        let cfg = ModelConfig {
            mode,
            ..small_cfg("EAM-SAT")
        };
        let model = Model::new(cfg.clone(), 0).unwrap();
        let mut g = Graph::new();
        let h = g.constant(randn(4, 8, &mut rng).map(|v| 40.0 * v));
        let tr = decode_trajectory(&mut g, &model.params, &cfg, h).unwrap();
        assert_eq!(g.shape(tr), &[4, w]);
        let st = decode_states(&mut g, &model.params, h).unwrap();
        assert!(g.value(st).data().iter().all(|p| *p > 0.0 && *p < 1.0));
        let zero = g.constant(Tensor::zeros(&[4, 8]));
        let tz = decode_trajectory(&mut g, &model.params, &cfg, zero).unwrap();
        let v = g.value(tz);
        assert!((1..4).all(|r| v.row(r) == v.row(0)));
    }
}

#[test]
fn default_pattern_denoiser_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = small_cfg("EAM-EAM-SAT");
    let model = Model::new(cfg.clone(), 3).unwrap();
    let z = randn(6, 8, &mut rng);
    let em = randn(6, 8, &mut rng);
    let vox = randn(27, 8, &mut rng);
    let report = grad_check(
        |g, store| {
            let zv = g.constant(z.clone());
            let cond = Conditioning {
                em: g.constant(em.clone()),
                voxels: Some(g.constant(vox.clone())),
                task: None,
            };
            let y = hmtm_forward(g, store, &cfg, zv, &cond, 4)?;
            let e = emf_denoiser(g, store, zv, 4)?;
            let s = g.add(y, e)?;
            let sq = g.square(s);
            Ok(g.sum(sq))
        },
        &model.params,
        &GradCheckOptions {
            max_entries_per_param: Some(8),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        report.passed(),
        "max rel error {:e} at {:?}",
        report.max_rel_error,
        report.worst
    );
}
