//! Challenge scoring and leaderboard rendering.

use serde::{Deserialize, Serialize};

pub const PSNR_WEIGHT: f64 = 1.66;
pub const POWER_WEIGHT: f64 = 50.0;
/// Per-frame runtime limit for 30 FPS.
pub const RUNTIME_LIMIT_MS: f64 = 33.0;

/// `1.66·PSNR + 50·(1 − power)`, or 0 when the runtime gate is enforced
/// and exceeded. Power is not clamped, so heavy models score negative.
pub fn challenge_score(psnr: f64, power_w: f64, runtime_ms: f64, enforce_runtime: bool) -> f64 {
    if enforce_runtime && runtime_ms > RUNTIME_LIMIT_MS {
        return 0.0;
    }
    PSNR_WEIGHT * psnr + POWER_WEIGHT * (1.0 - power_w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub team: String,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub runtime_ms: f64,
    pub power_w: f64,
    pub param_count: Option<usize>,
    pub macs: Option<u64>,
    pub model_bytes: Option<usize>,
}

impl MetricsRecord {
    pub fn new(team: &str, psnr: f64, ssim: Option<f64>, runtime_ms: f64, power_w: f64) -> Self {
        Self {
            team: team.to_string(),
            psnr,
            ssim,
            runtime_ms,
            power_w,
            param_count: None,
            macs: None,
            model_bytes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub metrics: MetricsRecord,
    pub final_score: f64,
}

impl ScoreRecord {
    pub fn score(metrics: MetricsRecord, enforce_runtime: bool) -> Self {
        let final_score = challenge_score(metrics.psnr, metrics.power_w, metrics.runtime_ms, enforce_runtime);
        Self { metrics, final_score }
    }
}

/// One published leaderboard row: inputs plus the printed final score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedRow {
    pub team: &'static str,
    pub model_kb: u32,
    pub psnr: f64,
    pub ssim: f64,
    pub runtime_ms: f64,
    pub power_w: f64,
    pub final_score: f64,
}

const fn row(team: &'static str, model_kb: u32, psnr: f64, ssim: f64, runtime_ms: f64, power_w: f64, final_score: f64) -> PublishedRow {
    PublishedRow {
        team,
        model_kb,
        psnr,
        ssim,
        runtime_ms,
        power_w,
        final_score,
    }
}

/// The challenge's final leaderboard, in published order.
pub const PUBLISHED: [PublishedRow; 11] = [
    row("MVideoSR", 17, 27.34, 0.7799, 3.05, 0.09, 90.9),
    row("ZX_VIP", 20, 27.52, 0.7872, 3.04, 0.10, 90.7),
    row("Fighter", 11, 27.34, 0.7816, 3.41, 0.20, 85.4),
    row("XJTU-MIGU SUPER", 50, 27.77, 0.7957, 3.25, 0.22, 85.1),
    row("BOE-IOT-AIBD", 40, 27.71, 0.7820, 1.97, 0.24, 84.0),
    row("GenMedia Group", 135, 28.40, 0.8105, 3.10, 0.33, 80.6),
    row("NCUT VGroup", 35, 27.46, 0.7822, 1.39, 0.40, 75.6),
    row("Mortar ICT", 75, 22.91, 0.7546, 1.76, 0.36, 70.0),
    row("RedCat AutoX", 62, 27.71, 0.7945, 7.26, 0.53, 69.5),
    row("221B", 186, 28.19, 0.8093, 10.1, 0.80, 56.8),
    row("SuperDash", 1810, 28.45, 0.8171, 26.8, 3.73, -89.3),
];

/// Bicubic upscaling baseline row of the published table (PSNR, SSIM).
pub const PUBLISHED_BICUBIC: (f64, f64) = (26.50, 0.7508);

/// Scored records built from the published inputs.
pub fn published_records(enforce_runtime: bool) -> Vec<ScoreRecord> {
    PUBLISHED
        .iter()
        .map(|r| {
            let mut m = MetricsRecord::new(r.team, r.psnr, Some(r.ssim), r.runtime_ms, r.power_w);
            m.model_bytes = Some(r.model_kb as usize * 1024);
            ScoreRecord::score(m, enforce_runtime)
        })
        .collect()
}

/// Sorted by final score, descending, ties broken by team id.
pub fn leaderboard(records: &[ScoreRecord]) -> Vec<ScoreRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| {
        b.final_score
            .total_cmp(&a.final_score)
            .then_with(|| a.metrics.team.cmp(&b.metrics.team))
    });
    v
}

const HEADER: [&str; 7] = ["Rank", "Team", "PSNR", "SSIM", "Runtime, ms", "Power, W@30FPS", "Final Score"];

fn cells(rank: usize, r: &ScoreRecord) -> [String; 7] {
    let m = &r.metrics;
    [
        rank.to_string(),
        m.team.clone(),
        format!("{:.2}", m.psnr),
        m.ssim.map_or_else(|| "-".to_string(), |s| format!("{s:.4}")),
        format!("{:.2}", m.runtime_ms),
        format!("{:.2}", m.power_w),
        format!("{:.2}", r.final_score),
    ]
}

/// Aligned plain-text table; rows must already be ranked.
pub fn render_table(rows: &[ScoreRecord]) -> String {
    let body: Vec<[String; 7]> = rows.iter().enumerate().map(|(i, r)| cells(i + 1, r)).collect();
    let mut widths: [usize; 7] = HEADER.map(|h| h.chars().count());
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: &[String]| -> String {
        let parts: Vec<String> = cols
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i] - c.chars().count();
                if i == 1 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(&HEADER.map(String::from));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    s.push_str(&"-".repeat(total));
    s.push('\n');
    for r in &body {
        s.push_str(&line(r));
    }
    s
}

/// Comma-separated form of the same table.
pub fn render_csv(rows: &[ScoreRecord]) -> String {
    let mut s = "rank,team,psnr,ssim,runtime_ms,power_w,final_score\n".to_string();
    for (i, r) in rows.iter().enumerate() {
        let c = cells(i + 1, r);
        let team = if c[1].contains(',') || c[1].contains('"') {
            format!("\"{}\"", c[1].replace('"', "\"\""))
        } else {
            c[1].clone()
        };
        let ssim = if c[3] == "-" { String::new() } else { c[3].clone() };
        s.push_str(&format!("{},{},{},{},{},{},{}\n", c[0], team, c[2], ssim, c[4], c[5], c[6]));
    }
    s
}
