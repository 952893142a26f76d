//! Fidelity metrics on RGB tensors in `[0, 1]`, full frame, no border crop.

use crate::error::{Error, Result};
use crate::Tensor;

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims("mse", a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.numel().max(1) as f64)
}

/// `10·log10(max²/MSE)`; `+∞` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

/// Mean of per-frame PSNR.
pub fn sequence_psnr(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid("sequence_psnr", "frame lists must be non-empty and equally long"));
    }
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(target) {
        s += psnr(p, t, 1.0)?;
    }
    Ok(s / pred.len() as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of one plane.
fn blur(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 Gaussian windows, averaged over planes.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims("ssim", a, b)?;
    let [n, c, h, w] = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid("ssim", format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            let pa: Vec<f64> = a.plane(ni, ci).iter().map(|&v| v as f64).collect();
            let pb: Vec<f64> = b.plane(ni, ci).iter().map(|&v| v as f64).collect();
            let mu_a = blur(&pa, h, w, &g);
            let mu_b = blur(&pb, h, w, &g);
            let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
            let e_aa = blur(&sq(&pa, &pa), h, w, &g);
            let e_bb = blur(&sq(&pb, &pb), h, w, &g);
            let e_ab = blur(&sq(&pa, &pb), h, w, &g);
            let mut s = 0.0;
            for i in 0..mu_a.len() {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = e_aa[i] - ma * ma;
                let vb = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                s += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            }
            total += s / mu_a.len() as f64;
        }
    }
    Ok(total / (n * c) as f64)
}
