//! Stage descriptions: everything one optimisation phase needs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::loss::LossKind;
use super::schedule::Schedule;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augment {
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub vflip: bool,
    #[serde(default)]
    pub rot90: bool,
}

impl Augment {
    pub const NONE: Augment = Augment {
        hflip: false,
        vflip: false,
        rot90: false,
    };
    pub const FLIPS: Augment = Augment {
        hflip: true,
        vflip: true,
        rot90: false,
    };
    pub const ALL: Augment = Augment {
        hflip: true,
        vflip: true,
        rot90: true,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum WarmStart {
    /// Convert the current ×2 model to ×4 by repeating its last conv.
    From2xRepetition,
    /// Load weights saved by an earlier run onto the current graph.
    FromCheckpoint(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distill {
    /// Zoo id of the teacher; it must be a single-frame ×4 model.
    pub teacher: String,
    /// Teacher weights; fresh seeded weights are used when absent.
    #[serde(default)]
    pub teacher_weights: Option<PathBuf>,
    /// Weight of the feature term.
    pub lambda: f64,
    /// Weight of an extra ground-truth term using the stage loss.
    #[serde(default)]
    pub gt_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    #[serde(default)]
    pub name: String,
    pub loss: LossKind,
    pub lr: f64,
    #[serde(default = "constant")]
    pub schedule: Schedule,
    pub iterations: usize,
    pub batch: usize,
    /// HR patch `(h, w)`.
    pub patch: (usize, usize),
    #[serde(default)]
    pub augment: Augment,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub warm_start: Option<WarmStart>,
    /// Upscaling factor trained in this stage.
    #[serde(default = "four")]
    pub scale: usize,
    /// Frames per clip for recurrent models.
    #[serde(default = "three")]
    pub clip_len: usize,
    #[serde(default)]
    pub distill: Option<Distill>,
    #[serde(default = "ten")]
    pub log_every: usize,
}

fn constant() -> Schedule {
    Schedule::Constant
}
fn four() -> usize {
    4
}
fn three() -> usize {
    3
}
fn ten() -> usize {
    10
}

impl Stage {
    /// A single-scale stage with flips off and a constant rate.
    pub fn new(name: &str, loss: LossKind, lr: f64, iterations: usize, batch: usize, patch: usize) -> Self {
        Stage {
            name: name.to_string(),
            loss,
            lr,
            schedule: Schedule::Constant,
            iterations,
            batch,
            patch: (patch, patch),
            augment: Augment::NONE,
            adam: AdamConfig::default(),
            warm_start: None,
            scale: 4,
            clip_len: 3,
            distill: None,
            log_every: 10,
        }
    }

    pub fn with_schedule(mut self, s: Schedule) -> Self {
        self.schedule = s;
        self
    }

    pub fn with_augment(mut self, a: Augment) -> Self {
        self.augment = a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("stage `{}`: {m}", self.name)));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if ![2, 4].contains(&self.scale) {
            return bad(format!("scale {} not supported", self.scale));
        }
        let (ph, pw) = self.patch;
        if ph == 0 || pw == 0 || ph % 4 != 0 || pw % 4 != 0 {
            return bad(format!("patch {ph}x{pw} must be positive multiples of 4"));
        }
        if self.clip_len == 0 || self.log_every == 0 {
            return bad("clip_len and log_every must be positive".into());
        }
        self.schedule.validate().or_else(|e| bad(e.to_string()))
    }
}

/// Learning rate at `step` of `stage`.
pub fn schedule_lr(stage: &Stage, step: usize) -> Result<f64> {
    if step >= stage.iterations {
        return Err(Error::invalid(
            "schedule_lr",
            format!("step {step} outside 0..{}", stage.iterations),
        ));
    }
    Ok(stage.schedule.at(stage.lr, step))
}
