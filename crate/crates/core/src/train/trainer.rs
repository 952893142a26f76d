//! Optimisation loop: batch assembly, forward/backward on the tape, Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, OptimizerState};
use super::loss::{loss, LossKind};
use super::stage::{schedule_lr, Distill, Stage, WarmStart};
use crate::data::{bicubic_resize, bicubic_upscale, transform, FrameStore, Split};
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::tensor::{Tape, Tensor, Var};
use crate::weights::load_weights;
use crate::zoo::{
    bind_params, build_model, forward_model, init_weights, record, record_with, run_sequence, transfer_2x_to_4x,
    window_at, ArchConfig, InitScheme, ModelGraph, Slot,
};

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// `step, lr, loss` lines.
    pub fn to_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}, {:.6e}, {:.6e}\n", r.step, r.lr, r.loss))
            .collect()
    }
}

/// Stream of per-step seeds derived from a run seed.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Frozen teacher plus the fixed projection of its feature map.
struct Teacher {
    graph: ModelGraph,
    /// `(student_c, teacher_c)` 1×1 weights, or `None` when widths agree.
    projection: Option<Tensor>,
    cfg: Distill,
}

impl Teacher {
    fn new(cfg: &Distill, student: &ModelGraph, seed: u64) -> Result<Self> {
        let g = build_model(&cfg.teacher, &ArchConfig::default())?;
        if g.is_recurrent() || g.scale != 4 {
            return Err(Error::Config(format!("teacher `{}` must be a single-frame ×4 model", cfg.teacher)));
        }
        let g = match &cfg.teacher_weights {
            Some(p) => load_weights(&g, p)?,
            None => init_weights(&g, InitScheme::UniformFanIn, seed),
        };
        let tc = feature_channels(&g)?;
        let sc = feature_channels(student)?;
        let projection = (tc != sc).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_6163);
            let bound = 1.0 / (tc as f64).sqrt();
            Tensor::from_fn([sc, tc, 1, 1], |_| rng.random_range(-bound..bound) as f32)
        });
        Ok(Teacher {
            graph: g,
            projection,
            cfg: cfg.clone(),
        })
    }

    /// Teacher output and projected feature map for an LR batch.
    fn targets(&self, lr: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(lr.clone());
        let r = record(&self.graph, &mut tape, &[(Slot::Frame, x)], false)?;
        let feat = r.feature(&self.graph).expect("checked at construction");
        let feat = match &self.projection {
            Some(w) => {
                let w = tape.constant(w.clone());
                tape.conv2d(feat, w, None, 1, 0, 1)?
            }
            None => feat,
        };
        Ok((tape.value(r.sr).clone(), tape.value(feat).clone()))
    }
}

fn feature_channels(g: &ModelGraph) -> Result<usize> {
    let tap = g
        .feature_tap
        .ok_or_else(|| Error::Config(format!("{} exposes no feature tap", g.arch)))?;
    let dims = crate::zoo::infer_dims(g, [1, 3, 8, 8])?;
    Ok(dims[tap][1])
}

/// Model, optimiser state and stage settings for one training phase.
pub struct Trainer {
    pub graph: ModelGraph,
    pub opt: OptimizerState,
    pub stage: Stage,
    teacher: Option<Teacher>,
}

impl Trainer {
    pub fn new(graph: ModelGraph, stage: Stage, seed: u64) -> Result<Self> {
        stage.validate()?;
        if stage.scale != graph.scale {
            return Err(Error::Config(format!(
                "stage `{}` trains ×{} but the model is ×{}",
                stage.name, stage.scale, graph.scale
            )));
        }
        let teacher = match &stage.distill {
            Some(d) if graph.is_recurrent() => {
                return Err(Error::Config(format!("distillation into recurrent `{}` is not supported ({})", graph.arch, d.teacher)))
            }
            Some(d) => Some(Teacher::new(d, &graph, seed)?),
            None => None,
        };
        let sizes: Vec<usize> = graph.param_views().iter().map(|p| p.data.len()).collect();
        Ok(Trainer {
            opt: OptimizerState::new(&sizes),
            graph,
            stage,
            teacher,
        })
    }

    /// One optimiser step on a batch. Frames are `(n, 3, h, w)` tensors in
    /// time order; single-frame models take exactly one.
    pub fn step(&mut self, step: usize, lr_frames: &[Tensor], hr_frames: &[Tensor]) -> Result<f64> {
        let rate = schedule_lr(&self.stage, step)?;
        let (value, grads) = if self.graph.is_recurrent() {
            self.clip_grads(lr_frames, hr_frames)?
        } else {
            if lr_frames.len() != 1 || hr_frames.len() != 1 {
                return Err(Error::invalid("train_step", "single-frame model takes one frame per step"));
            }
            self.frame_grads(&lr_frames[0], &hr_frames[0])?
        };
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss: value });
        }
        let grad_refs: Vec<&[f32]> = grads.iter().map(|g| g.data()).collect();
        let mut params = self.graph.params_mut();
        adam_step(&mut params, &grad_refs, &mut self.opt, rate, &self.stage.adam)?;
        Ok(value)
    }

    fn frame_grads(&self, lr: &Tensor, hr: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(lr.clone());
        let params = bind_params(&self.graph, &mut tape, true);
        let r = record_with(&self.graph, &mut tape, &[(Slot::Frame, x)], params)?;
        let sr = tape.value(r.sr);
        let mut seeds = Vec::new();
        let value = match &self.teacher {
            None => {
                let (v, g) = loss(sr, hr, self.stage.loss)?;
                seeds.push((r.sr, g));
                v
            }
            Some(t) => {
                let (t_out, t_feat) = t.targets(lr)?;
                let feat = r.feature(&self.graph).expect("checked at construction");
                let d = super::loss::distill_loss(sr, &t_out, tape.value(feat), &t_feat, t.cfg.lambda)?;
                let mut grad_out = d.grad_out;
                let mut value = d.value;
                if t.cfg.gt_weight > 0.0 {
                    let (v, g) = loss(sr, hr, self.stage.loss)?;
                    value += t.cfg.gt_weight * v;
                    let w = t.cfg.gt_weight as f32;
                    grad_out
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += w * b);
                }
                seeds.push((r.sr, grad_out));
                seeds.push((feat, d.grad_feat));
                value
            }
        };
        let grads = tape.backward_multi(seeds)?;
        Ok((value, collect(&tape, &r.params, grads)))
    }

    /// Back-propagation through time over a clip, starting from zero state.
    fn clip_grads(&self, lr: &[Tensor], hr: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        if lr.is_empty() || lr.len() != hr.len() {
            return Err(Error::invalid("train_step", format!("{} LR frames vs {} HR frames", lr.len(), hr.len())));
        }
        let g = &self.graph;
        let mut tape = Tape::<f32>::new();
        let frames: Vec<Var> = lr.iter().map(|t| tape.constant(t.clone())).collect();
        let params = bind_params(g, &mut tape, true);
        let slots = g.frame_slots();
        let offsets: Vec<isize> = slots.iter().filter_map(|s| s.time_offset()).collect();
        let [n, _, h, w] = lr[0].dims();
        let mut state: Vec<(Slot, Var)> = g
            .state_slots()
            .into_iter()
            .map(|(s, c)| (s, tape.constant(Tensor::zeros([n, c, h, w]))))
            .collect();
        let len = lr.len() as f64;
        let mut total = 0.0;
        let mut seeds = Vec::with_capacity(lr.len());
        for (t, target) in hr.iter().enumerate() {
            let mut inputs: Vec<(Slot, Var)> = slots.iter().copied().zip(window_at(&frames, &offsets, t)).collect();
            inputs.extend(state.iter().copied());
            let r = record_with(g, &mut tape, &inputs, params.clone())?;
            let (v, grad) = loss(tape.value(r.sr), target, self.stage.loss)?;
            total += v / len;
            seeds.push((r.sr, grad.map(|x| x / len as f32)));
            state = r.states;
        }
        let grads = tape.backward_multi(seeds)?;
        Ok((total, collect(&tape, &params, grads)))
    }
}

fn collect(tape: &Tape<f32>, params: &[Var], mut grads: crate::tensor::Gradients<f32>) -> Vec<Tensor> {
    params
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).dims())))
        .collect()
}

/// Draws and augments the batch for `step`. Returns LR and HR frames in
/// time order, each stacked over the batch.
pub fn draw_batch(store: &FrameStore, stage: &Stage, recurrent: bool, seed: u64) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_seed = rng.random::<u64>();
    let clips: Vec<(Vec<Tensor>, Vec<Tensor>)> = if recurrent {
        store
            .sample_clips(Split::Train, stage.patch, stage.clip_len, stage.batch, sample_seed)?
            .into_iter()
            .map(|c| (c.lr, c.hr))
            .collect()
    } else {
        store
            .sample_patches(Split::Train, stage.patch, stage.batch, sample_seed)?
            .into_iter()
            .map(|p| (vec![p.lr], vec![p.hr]))
            .collect()
    };
    let square = stage.patch.0 == stage.patch.1;
    let a = stage.augment;
    let mut lr_items: Vec<Vec<Tensor>> = Vec::with_capacity(clips.len());
    let mut hr_items: Vec<Vec<Tensor>> = Vec::with_capacity(clips.len());
    for (lr, hr) in clips {
        let fh = a.hflip && rng.random::<bool>();
        let fv = a.vflip && rng.random::<bool>();
        // Odd quarter turns would swap h and w and break stacking.
        let rot = if a.rot90 && square { rng.random_range(0..4u8) } else { 0 };
        let hr: Vec<Tensor> = hr.iter().map(|t| transform(t, fh, fv, rot)).collect();
        let lr: Vec<Tensor> = if stage.scale == 4 {
            lr.iter().map(|t| transform(t, fh, fv, rot)).collect()
        } else {
            hr.iter()
                .map(|t| bicubic_resize(t, t.h() / stage.scale, t.w() / stage.scale))
                .collect::<Result<_>>()?
        };
        lr_items.push(lr);
        hr_items.push(hr);
    }
    let frames = lr_items[0].len();
    let stack = |items: &[Vec<Tensor>], f: usize| -> Result<Tensor> {
        Tensor::stack(&items.iter().map(|v| v[f].clone()).collect::<Vec<_>>())
    };
    let lr = (0..frames).map(|f| stack(&lr_items, f)).collect::<Result<_>>()?;
    let hr = (0..frames).map(|f| stack(&hr_items, f)).collect::<Result<_>>()?;
    Ok((lr, hr))
}

/// Trains `g` for one stage. Deterministic in `seed`.
pub fn run_stage(g: &ModelGraph, stage: &Stage, store: &FrameStore, seed: u64) -> Result<(ModelGraph, TrainLog)> {
    let mut tr = Trainer::new(g.clone(), stage.clone(), seed)?;
    let recurrent = g.is_recurrent();
    let mut log = TrainLog::default();
    for step in 0..stage.iterations {
        let (lr, hr) = draw_batch(store, stage, recurrent, step_seed(seed, step as u64))?;
        let value = tr.step(step, &lr, &hr)?;
        if step % stage.log_every == 0 || step + 1 == stage.iterations {
            log.records.push(LogRecord {
                step,
                lr: schedule_lr(stage, step)?,
                loss: value,
            });
        }
    }
    Ok((tr.graph, log))
}

/// Applies a stage's warm-start directive to the incoming weights.
pub fn resolve_warm_start(g: &ModelGraph, stage: &Stage) -> Result<ModelGraph> {
    match &stage.warm_start {
        None => Ok(g.clone()),
        Some(WarmStart::From2xRepetition) => transfer_2x_to_4x(g),
        Some(WarmStart::FromCheckpoint(p)) => load_weights(g, p),
    }
}

/// Builds, initialises and trains `arch` through `stages` in order.
pub fn run_recipe(
    arch: &str,
    cfg: &ArchConfig,
    stages: &[Stage],
    store: &FrameStore,
    seed: u64,
    init: InitScheme,
) -> Result<(ModelGraph, Vec<TrainLog>)> {
    let first = stages.first().ok_or_else(|| Error::Config("recipe has no stages".into()))?;
    let cfg = ArchConfig {
        scale: Some(first.scale),
        ..cfg.clone()
    };
    let mut g = init_weights(&build_model(arch, &cfg)?, init, seed);
    let mut logs = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        g = resolve_warm_start(&g, stage)?;
        let (next, log) = run_stage(&g, stage, store, step_seed(seed, 1 << 40 | i as u64))?;
        g = next;
        logs.push(log);
    }
    Ok((g, logs))
}

/// Mean per-frame PSNR of a model and of bicubic upscaling on a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValReport {
    pub psnr: f64,
    pub bicubic_psnr: f64,
    pub frames: usize,
}

/// Runs `g` over whole sequences of `split`. Outputs are clamped to
/// `[0, 1]` before scoring; frames past `max_frames` per sequence are skipped.
pub fn validate(g: &ModelGraph, store: &FrameStore, split: Split, max_frames: Option<usize>) -> Result<ValReport> {
    let idx = store.index();
    let seqs: Vec<usize> = (0..idx.sequences.len()).filter(|&i| idx.sequences[i].split == split).collect();
    if seqs.is_empty() {
        return Err(Error::Dataset(format!("{} split is empty", split.dir_name())));
    }
    let (mut sum, mut base, mut count) = (0.0, 0.0, 0usize);
    for s in seqs {
        let n = idx.sequences[s].frames.min(max_frames.unwrap_or(usize::MAX));
        let pairs = (0..n).map(|f| store.pair(s, f)).collect::<Result<Vec<_>>>()?;
        let inputs: Vec<Tensor> = if g.scale == 4 {
            pairs.iter().map(|p| p.0.clone()).collect()
        } else {
            pairs
                .iter()
                .map(|p| bicubic_resize(&p.1, p.1.h() / g.scale, p.1.w() / g.scale))
                .collect::<Result<_>>()?
        };
        let outs = if g.is_recurrent() {
            run_sequence(g, &inputs)?
        } else {
            inputs.iter().map(|x| forward_model(g, x)).collect::<Result<_>>()?
        };
        for ((sr, x), p) in outs.iter().zip(&inputs).zip(&pairs) {
            sum += psnr(&sr.map(|v| v.clamp(0.0, 1.0)), &p.1, 1.0)?;
            let up = bicubic_upscale(x, g.scale)?;
            base += psnr(&up.map(|v| v.clamp(0.0, 1.0)), &p.1, 1.0)?;
            count += 1;
        }
    }
    let k = count.max(1) as f64;
    Ok(ValReport {
        psnr: sum / k,
        bicubic_psnr: base / k,
        frames: count,
    })
}

/// Mean loss of `g` on a fixed set of validation patches.
pub fn validation_loss(g: &ModelGraph, store: &FrameStore, kind: LossKind, patch: (usize, usize), n: usize, seed: u64) -> Result<f64> {
    let pairs = store.sample_patches(Split::Val, patch, n, seed)?;
    let mut total = 0.0;
    for p in &pairs {
        let lr = if g.scale == 4 {
            p.lr.clone()
        } else {
            bicubic_resize(&p.hr, p.hr.h() / g.scale, p.hr.w() / g.scale)?
        };
        let sr = if g.is_recurrent() {
            run_sequence(g, std::slice::from_ref(&lr))?.remove(0)
        } else {
            forward_model(g, &lr)?
        };
        total += loss(&sr, &p.hr, kind)?.0;
    }
    Ok(total / pairs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|s| step_seed(7, s)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(step_seed(7, 0), step_seed(8, 0));
    }

    #[test]
    fn log_lines() {
        let log = TrainLog {
            records: vec![LogRecord {
                step: 0,
                lr: 1e-3,
                loss: 0.5,
            }],
        };
        assert_eq!(log.to_lines(), "0, 1.000000e-3, 5.000000e-1\n");
    }
}
