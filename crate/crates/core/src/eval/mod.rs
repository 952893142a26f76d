//! Fidelity metrics, complexity accounting, runtime and challenge scoring.
//!
//! PSNR and SSIM are computed on RGB in `[0, 1]` over full frames without
//! border cropping; sequence scores average per-frame values.

mod complexity;
mod metrics;
mod score;

pub use complexity::{count_macs, host_descriptor, measure_runtime, RuntimeStats};
pub use metrics::{gaussian_window, mse, psnr, sequence_psnr, ssim, SSIM_SIGMA, SSIM_WINDOW};
pub use score::{
    challenge_score, leaderboard, published_records, render_csv, render_table, MetricsRecord, PublishedRow,
    ScoreRecord, POWER_WEIGHT, PSNR_WEIGHT, PUBLISHED, PUBLISHED_BICUBIC, RUNTIME_LIMIT_MS,
};
