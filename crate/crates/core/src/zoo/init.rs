//! Deterministic weight initialization.
//!
//! `UniformFanIn` draws kernels and biases from `U(±1/√fan_in)` using a
//! ChaCha8 stream, in parameter visit order. PReLU slopes start at 0.25 and
//! edge-branch scales and biases at `U(±1e-3)`.
//!
//! `FixedForTest` needs no RNG. A single element counter `i` runs over every
//! parameter element in visit order and
//!
//! ```text
//! u     = ((i · 2654435761 + seed) mod 2^32) / 2^32
//! value = (2u − 1) · bound
//! ```
//!
//! with `bound = 1/√fan_in` for kernels and biases and `0.5` for per-channel
//! vectors. Any implementation can reproduce these values exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelGraph, ParamKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    UniformFanIn,
    FixedForTest,
}

fn bound(kind: ParamKind, fan_in: usize) -> f64 {
    match kind {
        ParamKind::Weight | ParamKind::Bias => 1.0 / (fan_in.max(1) as f64).sqrt(),
        _ => 0.5,
    }
}

/// Counter-based value used by [`InitScheme::FixedForTest`].
pub fn fixed_value(i: u64, seed: u64, bound: f64) -> f32 {
    let h = i.wrapping_mul(2_654_435_761).wrapping_add(seed) & 0xffff_ffff;
    let u = h as f64 / 4_294_967_296.0;
    ((2.0 * u - 1.0) * bound) as f32
}

pub fn init_weights(g: &ModelGraph, scheme: InitScheme, seed: u64) -> ModelGraph {
    let mut out = g.clone();
    let meta: Vec<(ParamKind, usize)> = g.param_views().iter().map(|p| (p.kind, p.fan_in)).collect();
    let bufs = out.params_mut();
    match scheme {
        InitScheme::FixedForTest => {
            let mut i = 0u64;
            for ((kind, fan_in), buf) in meta.into_iter().zip(bufs) {
                let b = bound(kind, fan_in);
                for v in buf.iter_mut() {
                    *v = fixed_value(i, seed, b);
                    i += 1;
                }
            }
        }
        InitScheme::UniformFanIn => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for ((kind, fan_in), buf) in meta.into_iter().zip(bufs) {
                match kind {
                    ParamKind::PreluSlope => buf.fill(0.25),
                    ParamKind::EdgeScale | ParamKind::EdgeBias => {
                        buf.iter_mut().for_each(|v| *v = rng.random_range(-1e-3..1e-3))
                    }
                    ParamKind::Weight | ParamKind::Bias => {
                        let b = bound(kind, fan_in) as f32;
                        buf.iter_mut().for_each(|v| *v = rng.random_range(-b..b));
                    }
                }
            }
        }
    }
    out
}
