use nanosr::data::{make_fixtures, DatasetIndex, FixtureSpec, FrameStore, Split};
use nanosr::train::{
    adam_step, distill_loss, loss, run_recipe, run_stage, step_seed, validation_loss, AdamConfig, Distill, LossKind,
    OptimizerState, Schedule, Stage, Trainer, WarmStart,
};
use nanosr::weights::encode;
use nanosr::zoo::{build_model, init_weights, transfer_2x_to_4x, ArchConfig, InitScheme};
use nanosr::tensor::Tensor64;
use nanosr::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn fixtures() -> &'static (tempfile::TempDir, DatasetIndex) {
    static CELL: OnceLock<(tempfile::TempDir, DatasetIndex)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            train: 4,
            val: 2,
            test: 1,
            frames: 6,
            height: 64,
            width: 64,
        };
        let idx = make_fixtures(dir.path(), 31, &spec).unwrap();
        (dir, idx)
    })
}

fn random(dims: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| rng.random())
}

fn model(arch: &str, seed: u64) -> nanosr::zoo::ModelGraph {
    init_weights(&build_model(arch, &ArchConfig::default()).unwrap(), InitScheme::UniformFanIn, seed)
}

fn scalar_loss(p: &[f64], t: &[f64], kind: LossKind) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(t)
        .map(|(a, b)| {
            let d = a - b;
            match kind {
                LossKind::L1 => d.abs(),
                LossKind::Mse => d * d,
                LossKind::Charbonnier { eps } => (d * d + eps * eps).sqrt(),
            }
        })
        .sum::<f64>()
        / n
}

#[test]
fn loss_gradients_match_finite_differences() {
    let pred: Tensor64 = random([2, 3, 5, 4], 1).cast();
    let target: Tensor64 = random([2, 3, 5, 4], 2).cast();
    let h = 1e-6;
    for kind in [LossKind::L1, LossKind::Mse, LossKind::charbonnier()] {
        let (value, grad) = loss(&pred, &target, kind).unwrap();
        assert!((value - scalar_loss(pred.data(), target.data(), kind)).abs() < 1e-12);
        for k in (0..pred.numel()).step_by(7) {
            let mut p = pred.data().to_vec();
            p[k] += h;
            let up = scalar_loss(&p, target.data(), kind);
            p[k] -= 2.0 * h;
            let down = scalar_loss(&p, target.data(), kind);
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            assert!((a - numeric).abs() / a.abs().max(numeric.abs()) <= 1e-3, "{kind:?}[{k}]");
        }
    }
}

#[test]
fn distill_loss_is_the_sum_of_two_mses() {
    let (so, to) = (random([1, 3, 8, 8], 3), random([1, 3, 8, 8], 4));
    let (sf, tf) = (random([1, 6, 2, 2], 5), random([1, 6, 2, 2], 6));
    let mse = |a: &Tensor, b: &Tensor| {
        a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.numel() as f64
    };
    let d = distill_loss(&so, &to, &sf, &tf, 0.7).unwrap();
    assert!((d.value - (mse(&so, &to) + 0.7 * mse(&sf, &tf))).abs() < 1e-9);
    assert!(distill_loss(&so, &so, &sf, &sf, 0.7).unwrap().value == 0.0);
    assert!((distill_loss(&so, &to, &sf, &tf, 0.0).unwrap().value - mse(&so, &to)).abs() < 1e-9);
    assert!(distill_loss(&so, &to, &sf, &so, 1.0).is_err());
}

#[test]
fn adam_matches_a_replayed_update_rule() {
    // f(x) = ½ Σ a_i x_i², so ∂f/∂x_i = a_i x_i.
    let curv = [0.5f64, 1.0, 2.0, 4.0, 0.1];
    let mut x: Vec<f32> = vec![0.4, -0.3, 0.2, 0.45, -0.1];
    let mut state = OptimizerState::new(&[x.len()]);
    let cfg = AdamConfig::default();
    let (lr, b1, b2, eps) = (1e-2, 0.9f64, 0.999f64, 1e-8);
    let mut rx: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let (mut m, mut v) = (vec![0.0f64; 5], vec![0.0f64; 5]);
    for t in 1..=10 {
        let g: Vec<f32> = x.iter().zip(&curv).map(|(p, a)| (*p as f64 * a) as f32).collect();
        adam_step(&mut [&mut x[..]], &[&g[..]], &mut state, lr, &cfg).unwrap();
        for i in 0..5 {
            let gi = rx[i] * curv[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            rx[i] -= lr * mh / (vh.sqrt() + eps);
        }
        for i in 0..5 {
            assert!((x[i] as f64 - rx[i]).abs() <= 1e-7, "step {t} coord {i}: {} vs {}", x[i], rx[i]);
        }
    }
    assert_eq!(state.t, 10);
}

#[test]
fn schedules_hit_the_published_values() {
    let ms = Schedule::Multistep {
        milestones: vec![200_000, 400_000],
        factor: 0.5,
    };
    assert_eq!(ms.at(5e-4, 0), 5e-4);
    assert_eq!(ms.at(5e-4, 250_000), 2.5e-4);
    assert_eq!(ms.at(5e-4, 450_000), 1.25e-4);
    let cos = Schedule::Cosine {
        t_max: 168_000,
        lr_min: 1e-8,
    };
    assert_eq!(cos.at(1e-3, 0), 1e-3);
    assert!((cos.at(1e-3, 168_000) - 1e-8).abs() < 1e-20);
    assert!((cos.at(1e-3, 84_000) - (1e-3 + 1e-8) / 2.0).abs() < 1e-15);
}

#[test]
fn zero_iterations_are_rejected() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let stage = Stage::new("empty", LossKind::L1, 1e-3, 0, 2, 16);
    assert!(run_stage(&model("xjtu", 1), &stage, &store, 1).is_err());
    assert!(run_recipe("xjtu", &ArchConfig::default(), &[], &store, 1, InitScheme::UniformFanIn).is_err());
}

#[test]
fn overfit_loss_falls_over_fifty_steps() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let p = store.sample_patches(Split::Train, (32, 32), 1, 8).unwrap().remove(0);
    let stage = Stage::new("fit", LossKind::L1, 1e-3, 50, 1, 32);
    let mut tr = Trainer::new(model("xjtu", 2), stage, 2).unwrap();
    let losses: Vec<f64> = (0..50).map(|s| tr.step(s, &[p.lr.clone()], &[p.hr.clone()]).unwrap()).collect();
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises <= 5, "{rises} non-decreasing steps: {losses:?}");
    assert!(losses[49] < losses[0]);
}

#[test]
fn same_seed_gives_identical_weights() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    for arch in ["rcbsr", "redcat"] {
        let stage = Stage::new("det", LossKind::L1, 1e-3, 6, 2, 16);
        let a = run_stage(&model(arch, 3), &stage, &store, 9).unwrap();
        let b = run_stage(&model(arch, 3), &stage, &store, 9).unwrap();
        assert_eq!(encode(&a.0), encode(&b.0), "{arch}");
        assert_eq!(a.1, b.1);
        let c = run_stage(&model(arch, 3), &stage, &store, 10).unwrap();
        assert_ne!(encode(&a.0), encode(&c.0), "{arch}");
    }
}

#[test]
fn one_stage_recipe_equals_run_stage() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let stage = Stage::new("only", LossKind::Mse, 1e-3, 5, 2, 16);
    let (g, logs) = run_recipe("ncut", &ArchConfig::default(), &[stage.clone()], &store, 4, InitScheme::UniformFanIn).unwrap();
    let (h, log) = run_stage(&model("ncut", 4), &stage, &store, step_seed(4, 1 << 40)).unwrap();
    assert_eq!(encode(&g), encode(&h));
    assert_eq!(logs, vec![log]);
}

#[test]
fn mvideosr_pretrains_at_2x_then_transfers() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let mut s1 = Stage::new("x2", LossKind::L1, 5e-4, 3, 2, 32);
    s1.scale = 2;
    let mut s2 = Stage::new("x4", LossKind::L1, 5e-5, 3, 2, 32);
    s2.warm_start = Some(WarmStart::From2xRepetition);
    let stages = [s1.clone(), s2.clone()];
    let (g, logs) = run_recipe("mvideosr", &ArchConfig::default(), &stages, &store, 6, InitScheme::UniformFanIn).unwrap();
    assert_eq!((g.scale, logs.len()), (4, 2));
    let cfg2 = ArchConfig {
        scale: Some(2),
        ..ArchConfig::default()
    };
    let g2 = init_weights(&build_model("mvideosr", &cfg2).unwrap(), InitScheme::UniformFanIn, 6);
    let (g2, _) = run_stage(&g2, &s1, &store, step_seed(6, 1 << 40)).unwrap();
    let g4 = transfer_2x_to_4x(&g2).unwrap();
    let (g4, _) = run_stage(&g4, &s2, &store, step_seed(6, 1 << 40 | 1)).unwrap();
    assert_eq!(encode(&g), encode(&g4));
    // Without the directive the ×2 weights cannot feed a ×4 stage.
    s2.warm_start = None;
    assert!(run_recipe("mvideosr", &ArchConfig::default(), &[s1, s2], &store, 6, InitScheme::UniformFanIn).is_err());
}

#[test]
fn desk_two_stage_recipe_keeps_improving() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let s1 = Stage::new("a", LossKind::L1, 1e-3, 1000, 4, 32);
    let s2 = Stage::new("b", LossKind::L1, 5e-4, 1000, 4, 32);
    let cfg = ArchConfig::default();
    let (after_one, _) = run_recipe("xjtu", &cfg, &[s1.clone()], &store, 12, InitScheme::UniformFanIn).unwrap();
    let (after_two, _) = run_recipe("xjtu", &cfg, &[s1, s2], &store, 12, InitScheme::UniformFanIn).unwrap();
    let v1 = validation_loss(&after_one, &store, LossKind::L1, (32, 32), 16, 77).unwrap();
    let v2 = validation_loss(&after_two, &store, LossKind::L1, (32, 32), 16, 77).unwrap();
    assert!(v2 < v1, "{v2} !< {v1}");
}

#[test]
fn distillation_stage_trains_against_a_teacher() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let mut stage = Stage::new("kd", LossKind::Mse, 1e-4, 3, 2, 32);
    stage.distill = Some(Distill {
        teacher: "genmedia".into(),
        teacher_weights: None,
        lambda: 1.0,
        gt_weight: 0.0,
    });
    let (g, log) = run_stage(&model("boe", 5), &stage, &store, 5).unwrap();
    assert!(log.records.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
    assert_ne!(encode(&g), encode(&model("boe", 5)));
    stage.distill.as_mut().unwrap().teacher = "redcat".into();
    assert!(run_stage(&model("boe", 5), &stage, &store, 5).is_err());
}

#[test]
fn diverging_training_aborts_with_a_diagnostic() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let mut g = model("ncut", 1);
    g.params_mut()[0][0] = f32::NAN;
    let stage = Stage::new("nan", LossKind::L1, 1e-3, 2, 2, 16);
    match run_stage(&g, &stage, &store, 1) {
        Err(Error::NonFiniteLoss { step: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn losses_are_nonnegative_and_vanish_on_equality(seed in 0u64..10_000) {
        let a = random([1, 2, 3, 3], seed);
        let b = random([1, 2, 3, 3], seed + 1);
        for kind in [LossKind::L1, LossKind::Mse, LossKind::charbonnier()] {
            prop_assert!(loss(&a, &b, kind).unwrap().0 >= 0.0);
        }
        prop_assert_eq!(loss(&a, &a, LossKind::L1).unwrap().0, 0.0);
        prop_assert_eq!(loss(&a, &a, LossKind::Mse).unwrap().0, 0.0);
        let c = loss(&a, &a, LossKind::charbonnier()).unwrap().0;
        prop_assert!((c - 1e-3).abs() < 1e-12);
        prop_assert!(loss(&a, &b, LossKind::charbonnier()).unwrap().0 >= c);
    }

    #[test]
    fn zero_gradients_leave_parameters_fixed(vals in prop::collection::vec(-5.0f32..5.0, 1..20), lr in 1e-5f64..1.0) {
        let mut p = vals.clone();
        let g = vec![0.0f32; vals.len()];
        let mut st = OptimizerState::new(&[vals.len()]);
        adam_step(&mut [&mut p[..]], &[&g[..]], &mut st, lr, &AdamConfig::default()).unwrap();
        prop_assert_eq!(p, vals);
        prop_assert_eq!(st.t, 1);
    }

    #[test]
    fn schedules_never_increase(init in 1e-6f64..1.0, t_max in 1usize..5000, a in 0usize..6000, b in 0usize..6000,
                                m1 in 1usize..3000, gap in 1usize..3000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let cos = Schedule::Cosine { t_max, lr_min: init * 1e-3 };
        prop_assert!(cos.at(init, hi) <= cos.at(init, lo) + 1e-18);
        let ms = Schedule::Multistep { milestones: vec![m1, m1 + gap], factor: 0.5 };
        prop_assert!(ms.at(init, hi) <= ms.at(init, lo));
    }
}
