//! Adam with bias correction.
//!
//! Moments are stored in `f32`. Each element update is evaluated in `f64`
//! from the stored values and rounded once when written back:
//!
//! ```text
//! m ← β1·m + (1 − β1)·g
//! v ← β2·v + (1 − β2)·g²
//! p ← p − lr · (m / (1 − β1^t)) / (√(v / (1 − β2^t)) + ε)
//! ```
//!
//! where the `m` and `v` on the last line are the freshly rounded moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "b1")]
    pub beta1: f64,
    #[serde(default = "b2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn b1() -> f64 {
    0.9
}
fn b2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: b1(),
            beta2: b2(),
            eps: eps(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl OptimizerState {
    /// Zero moments shaped like `sizes`.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

pub fn adam_step(params: &mut [&mut [f32]], grads: &[&[f32]], state: &mut OptimizerState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::invalid("adam_step", format!("learning rate {lr} must be positive")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::shape("adam_step", format!("{} vs {} vs {}", p.len(), g.len(), m.len())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let gi = g[i] as f64;
            m[i] = (cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * gi) as f32;
            v[i] = (cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * gi * gi) as f32;
            let mh = m[i] as f64 / c1;
            let vh = v[i] as f64 / c2;
            p[i] = (p[i] as f64 - lr * mh / (vh.sqrt() + cfg.eps)) as f32;
        }
    }
    Ok(())
}
