//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after reporting so the workspace test run stays green while a
//! criterion is red; set `NANOSR_ACCEPTANCE_STRICT=1` to exit 1 on any FAIL.

use std::path::Path;
use std::time::Instant;

use nanosr::data::{make_fixtures, DatasetIndex, FixtureSpec, FrameStore, Split};
use nanosr::eval::{challenge_score, psnr, published_records, ssim, PUBLISHED};
use nanosr::reparam::fuse_model;
use nanosr::tensor::gradcheck::{check_gradients, op_cases};
use nanosr::train::{validate, LossKind, Stage, Trainer};
use nanosr::zoo::{
    arch_card, build_model, forward_model, forward_recurrent, init_weights, transfer_2x_to_4x, ArchConfig, InitScheme,
    ARCH_IDS,
};
use nanosr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = Box<dyn FnOnce(&Shared) -> Result<Outcome, String>>;

/// State shared between criteria: one desk dataset and the two seeded runs.
struct Shared {
    root: tempfile::TempDir,
    idx: DatasetIndex,
}

fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random())
}

fn score_reproduction(_: &Shared) -> Result<Outcome, String> {
    let mut worst = 0.0f64;
    for (row, rec) in PUBLISHED.iter().zip(published_records(true)) {
        worst = worst.max((rec.final_score - row.final_score).abs());
    }
    let gate = challenge_score(30.0, 0.1, 40.0, true) == 0.0 && challenge_score(30.0, 0.1, 33.0, true) > 0.0;
    Ok(outcome(
        worst <= 0.05 && gate,
        format!("11 rows, max |score - printed| {worst:.4} (<= 0.05), 33 ms gate {}", if gate { "ok" } else { "wrong" }),
    ))
}

fn fusion_exactness(_: &Shared) -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for arch in ["rcbsr", "mortar"] {
        let g = init_weights(&build_model(arch, &ArchConfig::default()).map_err(e)?, InitScheme::FixedForTest, 2);
        let f = fuse_model(&g).map_err(e)?;
        for _ in 0..100 {
            let x = random([1, 3, 32, 32], &mut rng);
            let d = forward_model(&f, &x).map_err(e)?.max_abs_diff(&forward_model(&g, &x).map_err(e)?);
            worst = worst.max(d);
        }
    }
    Ok(outcome(worst <= 1e-5, format!("rcbsr+mortar, 200 inputs, max |fused - unfused| {worst:.2e} (<= 1e-5)")))
}

fn gradient_correctness(_: &Shared) -> Result<Outcome, String> {
    let mut worst = (0.0f64, "");
    let cases = op_cases(3);
    let n = cases.len();
    for c in cases {
        let r = check_gradients(&*c.build, &c.inputs, 10, 1e-3, 17).map_err(e)?;
        if r.max_rel_err >= worst.0 {
            worst = (r.max_rel_err, c.name);
        }
    }
    Ok(outcome(
        worst.0 <= 1e-3,
        format!("{n} ops, 10 points per input, step 1e-3, worst rel err {:.2e} ({}) (<= 1e-3)", worst.0, worst.1),
    ))
}

fn overfit_smoke(s: &Shared) -> Result<Outcome, String> {
    let store = FrameStore::new(&s.idx);
    let p = store.sample_patches(Split::Train, (64, 64), 1, 0).map_err(e)?.remove(0);
    let g = init_weights(&build_model("xjtu", &ArchConfig::default()).map_err(e)?, InitScheme::UniformFanIn, 0);
    let mut tr = Trainer::new(g, Stage::new("overfit", LossKind::L1, 1e-3, 2000, 1, 64), 0).map_err(e)?;
    for step in 0..2000 {
        tr.step(step, &[p.lr.clone()], &[p.hr.clone()]).map_err(e)?;
    }
    let got = psnr(&forward_model(&tr.graph, &p.lr).map_err(e)?, &p.hr, 1.0).map_err(e)?;
    Ok(outcome(got >= 40.0, format!("xjtu, one 64x64 patch, 2000 Adam steps: {got:.2} dB (>= 40)")))
}

/// Trains the desk mvideosr recipe through the CLI into `out`.
fn desk_run(s: &Shared, out: &str) -> Result<(Vec<u8>, String), String> {
    let cfg = s.root.path().join(format!("{out}.toml"));
    let text = format!("arch = \"mvideosr\"\ndataset = \"data\"\nout = \"{out}\"\nseed = 7\ndesk = true\n");
    std::fs::write(&cfg, text).map_err(e)?;
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let code = nanosr_cli::run(["nanosr", "train", "--config", cfg.to_str().unwrap()], &mut stdout, &mut stderr);
    if code != 0 {
        return Err(String::from_utf8_lossy(&stderr).trim().to_string());
    }
    let w = std::fs::read(s.root.path().join(out).join("weights.nsrw")).map_err(e)?;
    Ok((w, String::from_utf8_lossy(&stdout).into_owned()))
}

fn learning_beats_bicubic(s: &Shared) -> Result<Outcome, String> {
    let t = Instant::now();
    desk_run(s, "run-a")?;
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let blank = build_model("mvideosr", &ArchConfig::default()).map_err(e)?;
    let g = nanosr::weights::load_weights(&blank, &s.root.path().join("run-a/weights.nsrw")).map_err(e)?;
    let v = validate(&g, &FrameStore::new(&s.idx), Split::Val, None).map_err(e)?;
    let margin = v.psnr - v.bicubic_psnr;
    Ok(outcome(
        margin >= 0.3 && minutes < 30.0,
        format!(
            "desk mvideosr recipe: val {:.2} dB vs bicubic {:.2} dB, margin {margin:+.2} dB (>= +0.3), {minutes:.1} min (< 30)",
            v.psnr, v.bicubic_psnr
        ),
    ))
}

fn ssim_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let [_, c, h, w] = a.dims();
    let mut k = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let r2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            *v = (-r2 / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for ch in 0..c {
        let mut plane = 0.0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let mut m = [0.0f64; 5];
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = k[i][j] / total;
                        let (p, q) = (a.at([0, ch, y + i, x + j]) as f64, b.at([0, ch, y + i, x + j]) as f64);
                        m[0] += wt * p;
                        m[1] += wt * q;
                        m[2] += wt * p * p;
                        m[3] += wt * q * q;
                        m[4] += wt * p * q;
                    }
                }
                let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                plane += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
            }
        }
        acc += plane / ((h - 10) * (w - 10)) as f64;
    }
    acc / c as f64
}

fn metric_oracles(_: &Shared) -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let a = random([1, 3, 16, 16], &mut rng);
        let n = random([1, 3, 16, 16], &mut rng);
        let b = Tensor::from_fn(a.dims(), |i| 0.7 * a.at(i) + 0.3 * n.at(i));
        let mse: f64 =
            a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.numel() as f64;
        dp = dp.max((psnr(&a, &b, 1.0).map_err(e)? - 10.0 * (1.0 / mse).log10()).abs());
        ds = ds.max((ssim(&a, &b).map_err(e)? - ssim_oracle(&a, &b)).abs());
    }
    let a = random([1, 3, 16, 16], &mut rng);
    let self_ssim = ssim(&a, &a).map_err(e)?;
    let z = Tensor::zeros([1, 3, 8, 8]);
    let forty = psnr(&z, &Tensor::full([1, 3, 8, 8], 0.01), 1.0).map_err(e)?;
    let pass = dp <= 1e-6 && ds <= 1e-6 && self_ssim == 1.0 && (forty - 40.0).abs() < 1e-4;
    Ok(outcome(
        pass,
        format!("20 pairs: psnr err {dp:.1e}, ssim err {ds:.1e} (<= 1e-6); ssim(a,a) = {self_ssim}; 1e-4 MSE -> {forty:.4} dB"),
    ))
}

fn weight_repetition(_: &Shared) -> Result<Outcome, String> {
    let cfg = ArchConfig {
        scale: Some(2),
        ..ArchConfig::default()
    };
    let g2 = init_weights(&build_model("mvideosr", &cfg).map_err(e)?, InitScheme::UniformFanIn, 4);
    let g4 = transfer_2x_to_4x(&g2).map_err(e)?;
    let x = Tensor::full([1, 3, 14, 14], 0.42);
    let (y2, y4) = (forward_model(&g2, &x).map_err(e)?, forward_model(&g4, &x).map_err(e)?);
    // Four 3x3 convs see four pixels out; beyond that the input looks infinite.
    let mut checked = 0;
    let mut mismatched = 0;
    for c in 0..3 {
        for ly in 4..10 {
            for lx in 4..10 {
                for i in 0..4 {
                    for j in 0..4 {
                        let a = y4.at([0, c, ly * 4 + i, lx * 4 + j]);
                        let b = y2.at([0, c, ly * 2 + i / 2, lx * 2 + j / 2]);
                        checked += 1;
                        mismatched += usize::from(a.to_bits() != b.to_bits());
                    }
                }
            }
        }
    }
    Ok(outcome(
        mismatched == 0 && g4.scale == 4,
        format!("{checked} x4 outputs vs duplicated x2 sub-pixels on a constant input: {mismatched} differ (exact)"),
    ))
}

fn shape_conformance(_: &Shared) -> Result<Outcome, String> {
    let x = Tensor::full([1, 3, 180, 320], 0.5);
    let mut bad = Vec::new();
    for arch in ARCH_IDS {
        let g = init_weights(&build_model(arch, &ArchConfig::default()).map_err(e)?, InitScheme::FixedForTest, 1);
        let y = if g.is_recurrent() {
            forward_recurrent(&g, &vec![x.clone(); g.frame_slots().len()], None).map_err(e)?.0
        } else {
            forward_model(&g, &x).map_err(e)?
        };
        let card = arch_card(arch, &ArchConfig::default()).map_err(e)?;
        if y.dims() != [1, 3, 720, 1280] || card.params != g.param_count() {
            bad.push(format!("{arch} {:?} {}/{}", y.dims(), g.param_count(), card.params));
        }
    }
    Ok(outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "10 models run 1x3x180x320 -> 1x3x720x1280; param counts equal the closed forms".into()
        } else {
            format!("mismatches: {}", bad.join("; "))
        },
    ))
}

fn determinism(s: &Shared) -> Result<Outcome, String> {
    let a = std::fs::read(s.root.path().join("run-a/weights.nsrw")).map_err(e)?;
    let (b, _) = desk_run(s, "run-b")?;
    Ok(outcome(a == b, format!("two desk mvideosr runs, seed 7: {} byte weight files {}", a.len(), if a == b { "identical" } else { "differ" })))
}

fn benchmark_sanity(s: &Shared) -> Result<Outcome, String> {
    let g = init_weights(&build_model("rcbsr", &ArchConfig::default()).map_err(e)?, InitScheme::FixedForTest, 1);
    let f = fuse_model(&g).map_err(e)?;
    let frame = [1, 3, 180, 320];
    let fused = nanosr::eval::measure_runtime(&f, frame, 1, 7).map_err(e)?.median_ms;
    let plain = nanosr::eval::measure_runtime(&g, frame, 1, 7).map_err(e)?.median_ms;
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let (txt, csv) = nanosr_cli::write_report(&published_records(true), &s.root.path().join("table1.txt")).map_err(e)?;
    let same = |a: &Path, b: &Path| std::fs::read(a).ok() == std::fs::read(b).ok();
    let golden_ok = same(&txt, &golden.join("table1.txt")) && same(&csv, &golden.join("table1.csv"));
    Ok(outcome(
        fused <= plain && golden_ok,
        format!(
            "rcbsr median {fused:.1} ms fused vs {plain:.1} ms unfused; report {} the golden files",
            if golden_ok { "matches" } else { "differs from" }
        ),
    ))
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let idx = make_fixtures(&root.path().join("data"), 2022, &FixtureSpec::default()).expect("desk fixtures");
    let shared = Shared { root, idx };
    let checks: Vec<(&str, Check)> = vec![
        ("score reproduction", Box::new(score_reproduction)),
        ("fusion exactness", Box::new(fusion_exactness)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("overfit smoke", Box::new(overfit_smoke)),
        ("learning beats bicubic", Box::new(learning_beats_bicubic)),
        ("metric oracles", Box::new(metric_oracles)),
        ("weight-repetition transfer", Box::new(weight_repetition)),
        ("shape conformance", Box::new(shape_conformance)),
        ("determinism", Box::new(determinism)),
        ("benchmark sanity", Box::new(benchmark_sanity)),
    ];
    let total = checks.len();
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let t = Instant::now();
        let o = check(&shared).unwrap_or_else(|msg| outcome(false, format!("error: {msg}")));
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", total - failed);
    if failed > 0 && std::env::var("NANOSR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
