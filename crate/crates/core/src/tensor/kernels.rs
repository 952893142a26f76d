//! Raw forward and backward kernels over flat NCHW slices.
//!
//! Parallelism is always over whole output planes (or whole weight rows for
//! weight gradients), so every output element is produced by one thread in a
//! fixed summation order and results are bitwise reproducible.

use rayon::prelude::*;

use super::{Dims, Real};
use crate::error::{Error, Result};

/// Loop indices `i` in `[0, loop_len)` whose target `i·stride + k − pad`
/// falls in `[0, target_len)`.
#[inline]
fn valid_range(loop_len: usize, target_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad <= k { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if target_len + pad <= k {
        0
    } else {
        (target_len + pad - k).div_ceil(stride)
    };
    let hi = hi.min(loop_len);
    (lo.min(hi), hi)
}

/// Geometry shared by convolution and transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn check_common(
        op: &'static str,
        input: Dims,
        weight: Dims,
        stride: usize,
        groups: usize,
    ) -> Result<()> {
        if stride == 0 {
            return Err(Error::invalid(op, "stride must be positive"));
        }
        if groups == 0 {
            return Err(Error::invalid(op, "groups must be positive"));
        }
        let [c_out, cin_g, _, _] = weight;
        if input[1] % groups != 0 || c_out % groups != 0 {
            return Err(Error::shape(
                op,
                format!("channels in={} out={} not divisible by groups={groups}", input[1], c_out),
            ));
        }
        if input[1] != cin_g * groups {
            return Err(Error::shape(
                op,
                format!(
                    "input has {} channels, weight expects {}·{groups}",
                    input[1], cin_g
                ),
            ));
        }
        Ok(())
    }

    pub fn conv(input: Dims, weight: Dims, stride: usize, pad: usize, groups: usize) -> Result<Self> {
        Self::check_common("conv2d", input, weight, stride, groups)?;
        let [n, c_in, h, w] = input;
        let [c_out, _, kh, kw] = weight;
        let span_h = h + 2 * pad;
        let span_w = w + 2 * pad;
        if span_h < kh || span_w < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"),
            ));
        }
        if (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("non-integer output size for input {h}x{w}, kernel {kh}, pad {pad}, stride {stride}"),
            ));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            groups,
            oh: (span_h - kh) / stride + 1,
            ow: (span_w - kw) / stride + 1,
        })
    }

    pub fn transposed(input: Dims, weight: Dims, stride: usize, pad: usize, groups: usize) -> Result<Self> {
        Self::check_common("transposed_conv2d", input, weight, stride, groups)?;
        let [n, c_in, h, w] = input;
        let [c_out, _, kh, kw] = weight;
        let full_h = if h == 0 { 0 } else { (h - 1) * stride + kh };
        let full_w = if w == 0 { 0 } else { (w - 1) * stride + kw };
        if full_h < 2 * pad || full_w < 2 * pad {
            return Err(Error::shape("transposed_conv2d", "padding crops the whole output"));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            groups,
            oh: full_h - 2 * pad,
            ow: full_w - 2 * pad,
        })
    }

    #[inline]
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    #[inline]
    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    pub fn out_dims(&self) -> Dims {
        [self.n, self.c_out, self.oh, self.ow]
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.c_out * out_plane];
    if out_plane == 0 {
        return out;
    }
    out.par_chunks_mut(out_plane).enumerate().for_each(|(idx, plane)| {
        let (n, o) = (idx / g.c_out, idx % g.c_out);
        if let Some(b) = b {
            plane.fill(b[o]);
        }
        let grp = o / cout_g;
        for ic in 0..cin_g {
            let ci = grp * cin_g + ic;
            let xp = &x[(n * g.c_in + ci) * in_plane..][..in_plane];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let wv = w[((o * cin_g + ic) * g.kh + ky) * g.kw + kx];
                    let (xlo, xhi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &xp[iy * g.w..][..g.w];
                        let orow = &mut plane[oy * g.ow..][..g.ow];
                        if g.stride == 1 {
                            let off = xlo + kx - g.pad;
                            let src = &row[off..off + (xhi - xlo)];
                            for (o, &v) in orow[xlo..xhi].iter_mut().zip(src) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of a convolution with respect to its input.
pub(crate) fn conv2d_backward_input<T: Real>(g: &ConvGeom, w: &[T], gy: &[T]) -> Vec<T> {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut gx = vec![T::zero(); g.n * g.c_in * in_plane];
    if in_plane == 0 {
        return gx;
    }
    gx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, plane)| {
        let (n, ci) = (idx / g.c_in, idx % g.c_in);
        let (grp, ic) = (ci / cin_g, ci % cin_g);
        for o in grp * cout_g..(grp + 1) * cout_g {
            let gp = &gy[(n * g.c_out + o) * out_plane..][..out_plane];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let wv = w[((o * cin_g + ic) * g.kh + ky) * g.kw + kx];
                    let (xlo, xhi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gp[oy * g.ow..][..g.ow];
                        let irow = &mut plane[iy * g.w..][..g.w];
                        for ox in xlo..xhi {
                            irow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient of a convolution with respect to its weights.
pub(crate) fn conv2d_backward_weight<T: Real>(g: &ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    let cin_g = g.cin_g();
    let cout_g = g.cout_g();
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let per_out = cin_g * g.kh * g.kw;
    let mut gw = vec![T::zero(); g.c_out * per_out];
    if per_out == 0 {
        return gw;
    }
    gw.par_chunks_mut(per_out).enumerate().for_each(|(o, row_w)| {
        let grp = o / cout_g;
        for ic in 0..cin_g {
            let ci = grp * cin_g + ic;
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let (xlo, xhi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                    let mut acc = T::zero();
                    for n in 0..g.n {
                        let xp = &x[(n * g.c_in + ci) * in_plane..][..in_plane];
                        let gp = &gy[(n * g.c_out + o) * out_plane..][..out_plane];
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ky - g.pad;
                            let xrow = &xp[iy * g.w..][..g.w];
                            let grow = &gp[oy * g.ow..][..g.ow];
                            for ox in xlo..xhi {
                                acc += grow[ox] * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    row_w[(ic * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });
    gw
}

/// Per-channel sum over batch and space; the gradient of a broadcast bias.
pub(crate) fn channel_sum<T: Real>(dims: Dims, gy: &[T]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    (0..c)
        .into_par_iter()
        .map(|ci| {
            let mut acc = T::zero();
            for ni in 0..n {
                for &v in &gy[(ni * c + ci) * plane..][..plane] {
                    acc += v;
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn transposed_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.c_out * out_plane];
    if out_plane == 0 {
        return out;
    }
    out.par_chunks_mut(out_plane).enumerate().for_each(|(idx, plane)| {
        let (n, o) = (idx / g.c_out, idx % g.c_out);
        if let Some(b) = b {
            plane.fill(b[o]);
        }
        let grp = o / cout_g;
        for ic in 0..cin_g {
            let ci = grp * cin_g + ic;
            let xp = &x[(n * g.c_in + ci) * in_plane..][..in_plane];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.h, g.oh, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let wv = w[((o * cin_g + ic) * g.kh + ky) * g.kw + kx];
                    let (xlo, xhi) = valid_range(g.w, g.ow, kx, g.stride, g.pad);
                    for iy in ylo..yhi {
                        let oy = iy * g.stride + ky - g.pad;
                        let xrow = &xp[iy * g.w..][..g.w];
                        let orow = &mut plane[oy * g.ow..][..g.ow];
                        for ix in xlo..xhi {
                            orow[ix * g.stride + kx - g.pad] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn transposed_backward_input<T: Real>(g: &ConvGeom, w: &[T], gy: &[T]) -> Vec<T> {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut gx = vec![T::zero(); g.n * g.c_in * in_plane];
    if in_plane == 0 {
        return gx;
    }
    gx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, plane)| {
        let (n, ci) = (idx / g.c_in, idx % g.c_in);
        let (grp, ic) = (ci / cin_g, ci % cin_g);
        for o in grp * cout_g..(grp + 1) * cout_g {
            let gp = &gy[(n * g.c_out + o) * out_plane..][..out_plane];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.h, g.oh, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let wv = w[((o * cin_g + ic) * g.kh + ky) * g.kw + kx];
                    let (xlo, xhi) = valid_range(g.w, g.ow, kx, g.stride, g.pad);
                    for iy in ylo..yhi {
                        let oy = iy * g.stride + ky - g.pad;
                        let grow = &gp[oy * g.ow..][..g.ow];
                        let xrow = &mut plane[iy * g.w..][..g.w];
                        for ix in xlo..xhi {
                            xrow[ix] += wv * grow[ix * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    });
    gx
}

pub(crate) fn transposed_backward_weight<T: Real>(g: &ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let per_out = cin_g * g.kh * g.kw;
    let mut gw = vec![T::zero(); g.c_out * per_out];
    if per_out == 0 {
        return gw;
    }
    gw.par_chunks_mut(per_out).enumerate().for_each(|(o, row_w)| {
        let grp = o / cout_g;
        for ic in 0..cin_g {
            let ci = grp * cin_g + ic;
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.h, g.oh, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let (xlo, xhi) = valid_range(g.w, g.ow, kx, g.stride, g.pad);
                    let mut acc = T::zero();
                    for n in 0..g.n {
                        let xp = &x[(n * g.c_in + ci) * in_plane..][..in_plane];
                        let gp = &gy[(n * g.c_out + o) * out_plane..][..out_plane];
                        for iy in ylo..yhi {
                            let oy = iy * g.stride + ky - g.pad;
                            let xrow = &xp[iy * g.w..][..g.w];
                            let grow = &gp[oy * g.ow..][..g.ow];
                            for ix in xlo..xhi {
                                acc += xrow[ix] * grow[ix * g.stride + kx - g.pad];
                            }
                        }
                    }
                    row_w[(ic * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });
    gw
}

/// Depth-to-space (`inverse == false`) or space-to-depth, DCR channel order:
/// `out(c, y·r+i, x·r+j) = in(c·r² + i·r + j, y, x)`.
pub(crate) fn pixel_shuffle<T: Real>(dims: Dims, x: &[T], r: usize, inverse: bool) -> (Dims, Vec<T>) {
    let [n, c, h, w] = dims;
    if !inverse {
        let oc = c / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for co in 0..oc {
                for i in 0..r {
                    for j in 0..r {
                        let ci = co * r * r + i * r + j;
                        let src = &x[(ni * c + ci) * h * w..][..h * w];
                        let dst_plane = (ni * oc + co) * oh * ow;
                        for y in 0..h {
                            let drow = dst_plane + (y * r + i) * ow + j;
                            for xx in 0..w {
                                out[drow + xx * r] = src[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        ([n, oc, oh, ow], out)
    } else {
        let oc = c * r * r;
        let (oh, ow) = (h / r, w / r);
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let src_plane = (ni * c + ci) * h * w;
                for i in 0..r {
                    for j in 0..r {
                        let co = ci * r * r + i * r + j;
                        let dst = &mut out[(ni * oc + co) * oh * ow..][..oh * ow];
                        for y in 0..oh {
                            let srow = src_plane + (y * r + i) * w + j;
                            for xx in 0..ow {
                                dst[y * ow + xx] = x[srow + xx * r];
                            }
                        }
                    }
                }
            }
        }
        ([n, oc, oh, ow], out)
    }
}

/// Source taps for one axis of half-pixel bilinear upsampling.
fn bilinear_taps(in_len: usize, scale: usize) -> Vec<(usize, usize, f64, f64)> {
    let out_len = in_len * scale;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

pub(crate) fn bilinear_forward<T: Real>(dims: Dims, x: &[T], scale: usize) -> (Dims, Vec<T>) {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![T::zero(); n * c * oh * ow];
    if h == 0 || w == 0 {
        return ([n, c, oh, ow], out);
    }
    let ty = bilinear_taps(h, scale);
    let tx: Vec<_> = bilinear_taps(w, scale)
        .into_iter()
        .map(|(a, b, la, lb)| (a, b, T::of(la), T::of(lb)))
        .collect();
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, plane)| {
        let src = &x[idx * h * w..][..h * w];
        for (oy, &(y0, y1, ly0, ly1)) in ty.iter().enumerate() {
            let (ly0, ly1) = (T::of(ly0), T::of(ly1));
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            for (ox, &(x0, x1, lx0, lx1)) in tx.iter().enumerate() {
                plane[oy * ow + ox] = ly0 * (lx0 * r0[x0] + lx1 * r0[x1]) + ly1 * (lx0 * r1[x0] + lx1 * r1[x1]);
            }
        }
    });
    ([n, c, oh, ow], out)
}

pub(crate) fn bilinear_backward<T: Real>(dims: Dims, gy: &[T], scale: usize) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h * scale, w * scale);
    let mut gx = vec![T::zero(); n * c * h * w];
    if h == 0 || w == 0 {
        return gx;
    }
    let ty = bilinear_taps(h, scale);
    let tx: Vec<_> = bilinear_taps(w, scale)
        .into_iter()
        .map(|(a, b, la, lb)| (a, b, T::of(la), T::of(lb)))
        .collect();
    gx.par_chunks_mut(h * w).enumerate().for_each(|(idx, plane)| {
        let gp = &gy[idx * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, ly0, ly1)) in ty.iter().enumerate() {
            let (ly0, ly1) = (T::of(ly0), T::of(ly1));
            for (ox, &(x0, x1, lx0, lx1)) in tx.iter().enumerate() {
                let g = gp[oy * ow + ox];
                plane[y0 * w + x0] += g * ly0 * lx0;
                plane[y0 * w + x1] += g * ly0 * lx1;
                plane[y1 * w + x0] += g * ly1 * lx0;
                plane[y1 * w + x1] += g * ly1 * lx1;
            }
        }
    });
    gx
}

/// Channel concatenation of tensors sharing `(n, h, w)`.
pub(crate) fn concat<T: Real>(parts: &[(Dims, &[T])]) -> (Dims, Vec<T>) {
    let [n, _, h, w] = parts[0].0;
    let c_total: usize = parts.iter().map(|(d, _)| d[1]).sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c_total * plane);
    for ni in 0..n {
        for (d, data) in parts {
            let chunk = d[1] * plane;
            out.extend_from_slice(&data[ni * chunk..(ni + 1) * chunk]);
        }
    }
    ([n, c_total, h, w], out)
}

/// Channels `[start, start + len)` of every batch item.
pub(crate) fn channel_slice<T: Real>(dims: Dims, x: &[T], start: usize, len: usize) -> (Dims, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for ni in 0..n {
        out.extend_from_slice(&x[(ni * c + start) * plane..(ni * c + start + len) * plane]);
    }
    ([n, len, h, w], out)
}

/// Scatters a channel-slice gradient back into a zero tensor of `dims`.
pub(crate) fn channel_slice_backward<T: Real>(dims: Dims, gy: &[T], start: usize, len: usize) -> Vec<T> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut gx = vec![T::zero(); n * c * plane];
    for ni in 0..n {
        gx[(ni * c + start) * plane..(ni * c + start + len) * plane]
            .copy_from_slice(&gy[ni * len * plane..(ni + 1) * len * plane]);
    }
    gx
}

/// Interleaved channel repeat: output channel `c·r + k` copies input channel `c`.
pub(crate) fn channel_repeat<T: Real>(dims: Dims, x: &[T], r: usize) -> (Dims, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c * r * plane);
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[(ni * c + ci) * plane..][..plane];
            for _ in 0..r {
                out.extend_from_slice(src);
            }
        }
    }
    ([n, c * r, h, w], out)
}

pub(crate) fn channel_repeat_backward<T: Real>(dims: Dims, gy: &[T], r: usize) -> Vec<T> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut gx = vec![T::zero(); n * c * plane];
    for ni in 0..n {
        for ci in 0..c {
            let dst = &mut gx[(ni * c + ci) * plane..][..plane];
            for k in 0..r {
                let src = &gy[((ni * c + ci) * r + k) * plane..][..plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    gx
}

/// Spatial padding by `pad` on every side with one constant per channel.
pub(crate) fn pad_const<T: Real>(dims: Dims, x: &[T], pad: usize, values: &[T]) -> (Dims, Vec<T>) {
    let [n, c, h, w] = dims;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); n * c * ph * pw];
    for ni in 0..n {
        for ci in 0..c {
            let dst = &mut out[(ni * c + ci) * ph * pw..][..ph * pw];
            dst.fill(values[ci]);
            let src = &x[(ni * c + ci) * h * w..][..h * w];
            for y in 0..h {
                dst[(y + pad) * pw + pad..][..w].copy_from_slice(&src[y * w..][..w]);
            }
        }
    }
    ([n, c, ph, pw], out)
}

/// Returns `(grad_input, grad_values)` for [`pad_const`].
pub(crate) fn pad_const_backward<T: Real>(dims: Dims, gy: &[T], pad: usize) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut gx = vec![T::zero(); n * c * h * w];
    let mut gv = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let src = &gy[(ni * c + ci) * ph * pw..][..ph * pw];
            let dst = &mut gx[(ni * c + ci) * h * w..][..h * w];
            for y in 0..ph {
                for x in 0..pw {
                    let g = src[y * pw + x];
                    let inside = y >= pad && y < pad + h && x >= pad && x < pad + w;
                    if inside {
                        dst[(y - pad) * w + (x - pad)] = g;
                    } else {
                        gv[ci] += g;
                    }
                }
            }
        }
    }
    (gx, gv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for loop_len in 0..7 {
            for target_len in 0..7 {
                for k in 0..4 {
                    for stride in 1..4 {
                        for pad in 0..4 {
                            let brute: Vec<usize> = (0..loop_len)
                                .filter(|&i| {
                                    let t = (i * stride + k) as isize - pad as isize;
                                    t >= 0 && (t as usize) < target_len
                                })
                                .collect();
                            let (lo, hi) = valid_range(loop_len, target_len, k, stride, pad);
                            assert_eq!(brute, (lo..hi).collect::<Vec<_>>(), "{loop_len} {target_len} {k} {stride} {pad}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_taps_clamp_at_edges() {
        let taps = bilinear_taps(2, 2);
        assert_eq!(taps[0], (0, 1, 1.0, 0.0));
        assert_eq!(taps[1], (0, 1, 0.75, 0.25));
        assert_eq!(taps[2], (0, 1, 0.25, 0.75));
        assert_eq!(taps[3], (1, 1, 0.75, 0.25));
    }
}
