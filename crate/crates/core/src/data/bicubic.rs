//! Separable bicubic resampling.
//!
//! Cubic convolution kernel with `a = −0.5`, half-pixel centres and clamped
//! edges. When shrinking, the kernel is stretched by `1/scale` so it also
//! acts as the anti-aliasing filter. Tap weights are normalized to sum to 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::Tensor;

const A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for every output position along one axis.
pub fn axis_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|o| {
            let centre = (o as f64 + 0.5) / scale - 0.5;
            let lo = (centre - support).floor() as isize;
            let hi = (centre + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let w = cubic((i as f64 - centre) * stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, n_in as isize - 1) as usize;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = img.dims();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::invalid("bicubic_resize", "sizes must be at least 1"));
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    out.data_mut()
        .par_chunks_mut(out_h * out_w)
        .enumerate()
        .for_each(|(plane, dst)| {
            let src = img.plane(plane / c, plane % c);
            let mut rows = vec![0.0f64; h * out_w];
            for y in 0..h {
                for (ox, taps) in tx.iter().enumerate() {
                    rows[y * out_w + ox] = taps.iter().map(|&(i, wt)| src[y * w + i] as f64 * wt).sum();
                }
            }
            for (oy, taps) in ty.iter().enumerate() {
                for ox in 0..out_w {
                    let v: f64 = taps.iter().map(|&(i, wt)| rows[i * out_w + ox] * wt).sum();
                    dst[oy * out_w + ox] = v as f32;
                }
            }
        });
    Ok(out)
}

/// Degrades an HR frame to quarter resolution.
pub fn make_lr(hr: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = hr.dims();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape("make_lr", format!("{h}x{w} is not divisible by 4")));
    }
    bicubic_resize(hr, h / 4, w / 4)
}

/// Bicubic ×`s` upscale, the classical baseline.
pub fn bicubic_upscale(lr: &Tensor, s: usize) -> Result<Tensor> {
    bicubic_resize(lr, lr.h() * s, lr.w() * s)
}
