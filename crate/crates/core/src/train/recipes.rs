//! Per-team training recipes, verbatim and desk-scaled.
//!
//! Epoch counts are converted to iterations over the 24,000 training frames
//! (240 sequences × 100 frames): `iterations = epochs · ⌈24000 / batch⌉`.
//! Where a team is silent about batch, patch, loss or augmentation the
//! defaults below apply: batch 16, 64×64 HR patches, L1, flips.

use super::loss::LossKind;
use super::schedule::Schedule;
use super::stage::{Augment, Distill, Stage, WarmStart};
use crate::error::{Error, Result};

/// Training frames in one full pass over the train split.
pub const TRAIN_FRAMES: usize = 24_000;

/// Iterations per epoch at a given batch size.
pub fn epoch_iters(batch: usize) -> usize {
    TRAIN_FRAMES.div_ceil(batch)
}

fn multistep(milestones: &[usize], factor: f64) -> Schedule {
    Schedule::Multistep {
        milestones: milestones.to_vec(),
        factor,
    }
}

/// Milestones at every multiple of `every` strictly below `total`.
fn every(every: usize, total: usize) -> Vec<usize> {
    (1..).map(|k| k * every).take_while(|&m| m < total).collect()
}

fn halving_epochs(epochs: usize, every_epochs: usize, batch: usize) -> (usize, Schedule) {
    let per = epoch_iters(batch);
    let total = epochs * per;
    (total, multistep(&every(every_epochs * per, total), 0.5))
}

const K: usize = 1000;

fn mvideosr() -> Vec<Stage> {
    let base = |name: &str, loss, lr, iters, patch, ms: &[usize]| {
        let mut s = Stage::new(name, loss, lr, iters, 64, patch);
        if !ms.is_empty() {
            s.schedule = multistep(ms, 0.5);
        }
        s.augment = Augment::FLIPS;
        s
    };
    let mut s1 = base("x2-pretrain", LossKind::L1, 5e-4, 500 * K, 256, &[200 * K, 400 * K]);
    s1.scale = 2;
    let mut s2a = base("x4-transfer", LossKind::L1, 5e-5, 500 * K, 256, &[100 * K, 300 * K, 450 * K]);
    s2a.warm_start = Some(WarmStart::From2xRepetition);
    let s2b = base("x4-restart", LossKind::L1, 2e-4, 500 * K, 256, &[200 * K]);
    let s3 = base("mse", LossKind::Mse, 2e-4, 1000 * K, 256, &[300 * K, 600 * K, 900 * K]);
    let s4 = base("mse-512", LossKind::Mse, 2e-5, 500 * K, 512, &[100 * K, 200 * K, 300 * K, 400 * K]);
    let s5 = base("mse-640", LossKind::Mse, 2e-5, 50 * K, 640, &[]);
    vec![s1, s2a, s2b, s3, s4, s5]
}

fn rcbsr() -> Vec<Stage> {
    let (iters, sched) = halving_epochs(4000, 1000, 64);
    let s1 = Stage::new("charbonnier", LossKind::charbonnier(), 5e-4, iters, 64, 512)
        .with_schedule(sched)
        .with_augment(Augment::ALL);
    // Length of the L2 fine-tune is not given; one quarter of stage one.
    let s2 = Stage::new("l2", LossKind::Mse, 2e-4, iters / 4, 64, 512).with_augment(Augment::ALL);
    vec![s1, s2]
}

fn fighter() -> Vec<Stage> {
    let (iters, sched) = halving_epochs(1500, 240, 16);
    // The rate is printed as "10e-3".
    vec![Stage::new("l1", LossKind::L1, 10e-3, iters, 16, 64)
        .with_schedule(sched)
        .with_augment(Augment::FLIPS)]
}

fn xjtu() -> Vec<Stage> {
    // Rates are encoded as printed, including the 0.12 fine-tune rate.
    let s1 = Stage::new("b4", LossKind::L1, 1.6e-2, 200 * epoch_iters(4), 4, 64).with_augment(Augment::FLIPS);
    let s2 = Stage::new("b64", LossKind::L1, 0.12, 800 * epoch_iters(64), 64, 64).with_augment(Augment::FLIPS);
    let s3 = Stage::new("b4-final", LossKind::L1, 0.12, 1600 * epoch_iters(4), 4, 64).with_augment(Augment::FLIPS);
    vec![s1, s2, s3]
}

fn boe() -> Vec<Stage> {
    let mut s = Stage::new("distill", LossKind::Mse, 1e-4, 500 * K, 4, 60);
    s.patch = (60, 80);
    s.augment = Augment::FLIPS;
    s.distill = Some(Distill {
        teacher: "genmedia".into(),
        teacher_weights: None,
        lambda: 1.0,
        gt_weight: 0.0,
    });
    vec![s]
}

fn genmedia() -> Vec<Stage> {
    let (iters, sched) = halving_epochs(1000, 200, 32);
    vec![Stage::new("l1", LossKind::L1, 1e-3, iters, 32, 96)
        .with_schedule(sched)
        .with_augment(Augment::FLIPS)]
}

fn ncut() -> Vec<Stage> {
    vec![Stage::new("l1", LossKind::L1, 1e-3, 168 * K, 16, 64)
        .with_schedule(Schedule::Cosine {
            t_max: 168 * K,
            lr_min: 1e-8,
        })
        .with_augment(Augment::FLIPS)]
}

fn mortar() -> Vec<Stage> {
    let (iters, sched) = halving_epochs(100, 30, 16);
    vec![Stage::new("l1", LossKind::L1, 5e-4, iters, 16, 64)
        .with_schedule(sched)
        .with_augment(Augment::FLIPS)]
}

fn redcat() -> Vec<Stage> {
    let mut s = Stage::new("l1", LossKind::L1, 3e-3, 150 * K, 8, 64)
        .with_schedule(multistep(&every(15 * K, 150 * K), 0.5))
        .with_augment(Augment::FLIPS);
    s.clip_len = 5;
    vec![s]
}

fn team221b() -> Vec<Stage> {
    let mut s = Stage::new("charbonnier", LossKind::charbonnier(), 1e-3, 150 * K, 16, 64)
        .with_schedule(multistep(&[50 * K, 100 * K], 0.5))
        .with_augment(Augment::FLIPS);
    s.clip_len = 5;
    vec![s]
}

/// Full-length recipe for a zoo architecture.
pub fn recipe(arch: &str) -> Result<Vec<Stage>> {
    Ok(match arch {
        "mvideosr" => mvideosr(),
        "rcbsr" => rcbsr(),
        "fighter" => fighter(),
        "xjtu" => xjtu(),
        "boe" => boe(),
        "genmedia" => genmedia(),
        "ncut" => ncut(),
        "mortar" => mortar(),
        "redcat" => redcat(),
        "team221b" => team221b(),
        other => return Err(Error::UnknownArch(other.to_string())),
    })
}

/// Desk factor for iteration counts.
pub const DESK_DIVISOR: usize = 500;

fn shrink(n: usize) -> usize {
    (n / DESK_DIVISOR).max(1)
}

fn cap_patch(p: usize) -> usize {
    (p.min(64) / 4 * 4).max(4)
}

/// Scales a stage for laptop-sized runs: iterations, milestones and the
/// cosine period ÷500, batch at most 8, patches at most 64 pixels a side.
pub fn desk_stage(s: &Stage) -> Stage {
    let mut d = s.clone();
    d.iterations = shrink(s.iterations);
    d.batch = s.batch.min(8);
    d.patch = (cap_patch(s.patch.0), cap_patch(s.patch.1));
    d.schedule = match &s.schedule {
        Schedule::Constant => Schedule::Constant,
        Schedule::Multistep { milestones, factor } => {
            let mut ms: Vec<usize> = milestones.iter().map(|&m| shrink(m)).collect();
            ms.dedup();
            Schedule::Multistep {
                milestones: ms,
                factor: *factor,
            }
        }
        Schedule::Cosine { t_max, lr_min } => Schedule::Cosine {
            t_max: shrink(*t_max),
            lr_min: *lr_min,
        },
    };
    d
}

pub fn desk(stages: &[Stage]) -> Vec<Stage> {
    stages.iter().map(desk_stage).collect()
}
