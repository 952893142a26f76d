//! Seeded synthetic video fixtures for running everything without REDS.
//!
//! Each sequence is a drifting two-colour gradient overlaid with an oriented
//! stripe texture and a handful of soft-edged discs and boxes moving at
//! constant velocity. Content is rendered analytically at HR, quantized to
//! 8 bits, then degraded with the same bicubic ×4 as real data.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_image, make_lr, quantize, DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for FixtureSpec {
    /// Twenty sequences of ten 128×128 frames.
    fn default() -> Self {
        Self {
            train: 16,
            val: 2,
            test: 2,
            frames: 10,
            height: 128,
            width: 128,
        }
    }
}

#[derive(Clone, Debug)]
enum ShapeKind {
    Disc { r: f64 },
    Box { hw: f64, hh: f64 },
}

#[derive(Clone, Debug)]
struct Shape {
    kind: ShapeKind,
    pos: (f64, f64),
    vel: (f64, f64),
    colour: [f64; 3],
    edge: f64,
}

#[derive(Clone, Debug)]
struct Scene {
    c0: [f64; 3],
    c1: [f64; 3],
    grad_dir: (f64, f64),
    grad_drift: f64,
    stripe_freq: f64,
    stripe_dir: (f64, f64),
    stripe_amp: f64,
    stripe_speed: f64,
    shapes: Vec<Shape>,
}

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn scene(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Scene {
    let a: f64 = rng.random_range(0.0..2.0 * PI);
    let b: f64 = rng.random_range(0.0..PI);
    let n_shapes = rng.random_range(3..=6);
    let shapes = (0..n_shapes)
        .map(|_| {
            let size = rng.random_range(0.06..0.2) * h.min(w) as f64;
            let kind = if rng.random_bool(0.5) {
                ShapeKind::Disc { r: size }
            } else {
                ShapeKind::Box {
                    hw: size,
                    hh: size * rng.random_range(0.4..1.2),
                }
            };
            Shape {
                kind,
                pos: (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)),
                vel: (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5)),
                colour: colour(rng),
                edge: rng.random_range(0.4..1.2),
            }
        })
        .collect();
    Scene {
        c0: colour(rng),
        c1: colour(rng),
        grad_dir: (a.cos(), a.sin()),
        grad_drift: rng.random_range(-0.02..0.02),
        stripe_freq: rng.random_range(1.0 / 24.0..1.0 / 10.0),
        stripe_dir: (b.cos(), b.sin()),
        stripe_amp: rng.random_range(0.03..0.12),
        stripe_speed: rng.random_range(-0.1..0.1),
        shapes,
    }
}

fn smoothstep_edge(d: f64, edge: f64) -> f64 {
    // Coverage of a half-plane at signed distance `d` with a soft ramp.
    1.0 / (1.0 + (d / edge * 2.5).exp())
}

fn pixel(s: &Scene, t: usize, y: f64, x: f64, h: usize, w: usize) -> [f64; 3] {
    let t = t as f64;
    let (hf, wf) = (h as f64, w as f64);
    let g = ((y / hf - 0.5) * s.grad_dir.0 + (x / wf - 0.5) * s.grad_dir.1 + 0.5 + s.grad_drift * t).clamp(0.0, 1.0);
    let stripe = s.stripe_amp
        * (2.0 * PI * (s.stripe_freq * (y * s.stripe_dir.0 + x * s.stripe_dir.1) + s.stripe_speed * t)).sin();
    let mut px = [0.0; 3];
    for c in 0..3 {
        px[c] = s.c0[c] * (1.0 - g) + s.c1[c] * g + stripe;
    }
    for sh in &s.shapes {
        let cy = (sh.pos.0 + sh.vel.0 * t).rem_euclid(hf + 40.0) - 20.0;
        let cx = (sh.pos.1 + sh.vel.1 * t).rem_euclid(wf + 40.0) - 20.0;
        let (dy, dx) = (y - cy, x - cx);
        let d = match sh.kind {
            ShapeKind::Disc { r } => (dy * dy + dx * dx).sqrt() - r,
            ShapeKind::Box { hw, hh } => (dy.abs() - hh).max(dx.abs() - hw),
        };
        let a = smoothstep_edge(d, sh.edge);
        for c in 0..3 {
            px[c] = px[c] * (1.0 - a) + sh.colour[c] * a;
        }
    }
    px.map(|v| v.clamp(0.0, 1.0))
}

/// HR frame `t` of synthetic sequence `seq`, already on the 8-bit grid.
pub fn render_frame(seed: u64, seq: usize, t: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq as u64);
    let s = scene(&mut rng, h, w);
    let mut out = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let p = pixel(&s, t, y as f64 + 0.5, x as f64 + 0.5, h, w);
            for (c, v) in p.into_iter().enumerate() {
                out.set([0, c, y, x], v as f32);
            }
        }
    }
    quantize(&out)
}

/// Writes a complete desk dataset under `root` and indexes it.
pub fn make_fixtures(root: &Path, seed: u64, spec: &FixtureSpec) -> Result<DatasetIndex> {
    if spec.height % 4 != 0 || spec.width % 4 != 0 || spec.frames == 0 {
        return Err(Error::invalid("make_fixtures", "frame size must be divisible by 4 and frames positive"));
    }
    let mut seq = 0usize;
    for (split, count) in [(Split::Train, spec.train), (Split::Val, spec.val), (Split::Test, spec.test)] {
        for _ in 0..count {
            let id = format!("{seq:03}");
            let hr_dir = root.join(split.dir_name()).join(&id);
            let lr_dir = root.join(format!("{}_lr", split.dir_name())).join(&id);
            for d in [&hr_dir, &lr_dir] {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            for t in 0..spec.frames {
                let hr = render_frame(seed, seq, t, spec.height, spec.width);
                let lr = quantize(&make_lr(&hr)?);
                encode_image(&hr, &hr_dir.join(format!("{t:08}.png")))?;
                encode_image(&lr, &lr_dir.join(format!("{t:08}.png")))?;
            }
            seq += 1;
        }
    }
    DatasetIndex::scan(root, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_seeded_and_in_range() {
        let a = render_frame(1, 3, 2, 32, 48);
        assert_eq!(a, render_frame(1, 3, 2, 32, 48));
        assert_ne!(a, render_frame(2, 3, 2, 32, 48));
        assert_ne!(a, render_frame(1, 3, 3, 32, 48));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
