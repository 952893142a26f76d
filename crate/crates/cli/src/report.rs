//! Leaderboard reports on disk.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nanosr::eval::{leaderboard, render_csv, render_table, ScoreRecord};

/// Ranks `records` and writes the text table to `path` and the CSV form
/// next to it with a `.csv` extension. Returns both paths.
pub fn write_report(records: &[ScoreRecord], path: &Path) -> Result<(PathBuf, PathBuf)> {
    let ranked = leaderboard(records);
    let csv = path.with_extension("csv");
    std::fs::write(path, render_table(&ranked)).with_context(|| format!("writing {}", path.display()))?;
    std::fs::write(&csv, render_csv(&ranked)).with_context(|| format!("writing {}", csv.display()))?;
    Ok((path.to_path_buf(), csv))
}
