//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nanosr::train::{desk, recipe, Stage};
use nanosr::zoo::{ArchConfig, InitScheme};
use serde::Deserialize;

fn default_true() -> bool {
    true
}

fn default_init() -> InitScheme {
    InitScheme::UniformFanIn
}

/// Everything a `train` run needs. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: String,
    #[serde(default)]
    pub arch_config: ArchConfig,
    /// Explicit stages; the architecture's own recipe when absent.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
    pub dataset: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub desk: bool,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    /// Output directory for weights and logs.
    pub out: PathBuf,
    #[serde(default)]
    pub power_w: Option<f64>,
    #[serde(default = "default_true")]
    pub enforce_runtime: bool,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("config")?;
        cfg.dataset = base.join(&cfg.dataset);
        cfg.out = base.join(&cfg.out);
        for s in cfg.stages.iter_mut().flatten() {
            if let Some(nanosr::train::WarmStart::FromCheckpoint(p)) = &mut s.warm_start {
                *p = base.join(&*p);
            }
            if let Some(d) = &mut s.distill {
                if let Some(p) = &mut d.teacher_weights {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(p) = cfg.power_w {
            if !(p >= 0.0) {
                bail!("power_w must be non-negative, got {p}");
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Stages to run, desk-scaled when `desk` is set.
    pub fn resolved_stages(&self) -> Result<Vec<Stage>> {
        let stages = match &self.stages {
            Some(s) => s.clone(),
            None => recipe(&self.arch)?,
        };
        if stages.is_empty() {
            bail!("config has an empty stage list");
        }
        let stages = if self.desk { desk(&stages) } else { stages };
        for s in &stages {
            s.validate()?;
        }
        Ok(stages)
    }
}
