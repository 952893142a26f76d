//! Losses, Adam, learning-rate schedules, stage and recipe runners.

mod adam;
mod loss;
mod recipes;
mod schedule;
mod stage;
mod trainer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use loss::{distill_loss, loss, DistillLoss, LossKind};
pub use recipes::{desk, desk_stage, epoch_iters, recipe, DESK_DIVISOR, TRAIN_FRAMES};
pub use schedule::Schedule;
pub use stage::{schedule_lr, Augment, Distill, Stage, WarmStart};
pub use trainer::{
    draw_batch, resolve_warm_start, run_recipe, run_stage, step_seed, validate, validation_loss, LogRecord, TrainLog,
    Trainer, ValReport,
};
