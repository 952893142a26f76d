//! Structural re-parametrization: multi-branch training blocks that collapse
//! into a single convolution for inference.
//!
//! A [`BranchBlock`] sums the outputs of its branches. Each branch is one of
//!
//! * a plain `k×k` convolution with "same" padding,
//! * a `1×1` expansion followed by a `k×k` convolution,
//! * a `1×1` expansion followed by a fixed depthwise edge filter with a
//!   learnable per-channel scale and bias.
//!
//! For the two-stage branches the intermediate tensor is padded with the
//! expansion bias rather than with zeros. With that convention the fused
//! kernel `W'[o,i] = Σ_m W2[o,m]·W1[m,i]` and bias
//! `b'[o] = b2[o] + Σ_m b1[m]·ΣW2[o,m]` reproduce the branch exactly at the
//! image borders too.
//!
//! The edge filters are the usual 3×3 operators:
//!
//! ```text
//! Sobel-x      Sobel-y      Laplacian
//!  1  0 -1      1  2  1      0  1  0
//!  2  0 -2      0  0  0      1 -4  1
//!  1  0 -1     -1 -2 -1      0  1  0
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, TensorBase, Var};
use crate::zoo::{LayerOp, ModelGraph, ParamKind, ParamView};
use crate::ConvParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    SobelX,
    SobelY,
    Laplacian,
}

impl EdgeKind {
    pub fn mask(self) -> [f32; 9] {
        match self {
            EdgeKind::SobelX => [1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0],
            EdgeKind::SobelY => [1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0, -2.0, -1.0],
            EdgeKind::Laplacian => [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::SobelX => "sobel_x",
            EdgeKind::SobelY => "sobel_y",
            EdgeKind::Laplacian => "laplacian",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Branch {
    /// `k×k` convolution, stride 1, padding `k/2`.
    Conv(ConvParams),
    /// `1×1` expansion then a `k×k` convolution.
    Seq { expand: ConvParams, conv: ConvParams },
    /// `1×1` expansion then `scale[c]·mask` applied depthwise, plus `bias`.
    Edge {
        expand: ConvParams,
        kind: EdgeKind,
        scale: Vec<f32>,
        bias: Vec<f32>,
    },
}

/// Training-time block whose branches are summed.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub branches: Vec<Branch>,
}

fn check_same(op: &'static str, p: &ConvParams, c_in: usize, c_out: usize) -> Result<()> {
    let k = p.kernel();
    if p.c_in() != c_in || p.c_out() != c_out {
        return Err(Error::shape(
            op,
            format!("branch maps {}→{}, block is {c_in}→{c_out}", p.c_in(), p.c_out()),
        ));
    }
    if p.stride != 1 || k % 2 == 0 || p.padding != k / 2 || p.weight.w() != k {
        return Err(Error::invalid(op, "branch convolutions must be odd, square, stride 1, same-padded"));
    }
    Ok(())
}

fn check_expand(op: &'static str, p: &ConvParams, c_in: usize) -> Result<()> {
    if p.kernel() != 1 || p.weight.w() != 1 || p.stride != 1 || p.padding != 0 || p.groups != 1 {
        return Err(Error::invalid(op, "expansion must be a dense 1×1, stride 1, pad 0"));
    }
    if p.c_in() != c_in {
        return Err(Error::shape(op, format!("expansion input {} vs {c_in}", p.c_in())));
    }
    Ok(())
}

impl Branch {
    fn validate(&self, c_in: usize, c_out: usize) -> Result<()> {
        match self {
            Branch::Conv(p) => check_same("branch_block", p, c_in, c_out),
            Branch::Seq { expand, conv } => {
                check_expand("branch_block", expand, c_in)?;
                check_same("branch_block", conv, expand.c_out(), c_out)
            }
            Branch::Edge {
                expand, scale, bias, ..
            } => {
                check_expand("branch_block", expand, c_in)?;
                if expand.c_out() != c_out || scale.len() != c_out || bias.len() != c_out {
                    return Err(Error::shape("branch_block", "edge branch widths must equal c_out"));
                }
                Ok(())
            }
        }
    }

    /// The edge stage as a depthwise convolution `(c, 1, 3, 3)`.
    fn edge_depthwise(kind: EdgeKind, scale: &[f32], bias: &[f32]) -> ConvParams {
        let mask = kind.mask();
        let c = scale.len();
        let mut w = Vec::with_capacity(c * 9);
        for &s in scale {
            w.extend(mask.iter().map(|&m| s * m));
        }
        ConvParams {
            weight: Tensor::new([c, 1, 3, 3], w).expect("edge kernel dims"),
            bias: Some(bias.to_vec()),
            stride: 1,
            padding: 1,
            groups: c,
        }
    }

    /// Collapses the branch into one convolution.
    pub fn to_conv(&self) -> Result<ConvParams> {
        match self {
            Branch::Conv(p) => Ok(p.clone()),
            Branch::Seq { expand, conv } => fuse_sequential(expand, conv),
            Branch::Edge {
                expand,
                kind,
                scale,
                bias,
            } => fuse_sequential(expand, &Self::edge_depthwise(*kind, scale, bias)),
        }
    }
}

impl BranchBlock {
    pub fn new(c_in: usize, c_out: usize, branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::invalid("branch_block", "a block needs at least one branch"));
        }
        for b in &branches {
            b.validate(c_in, c_out)?;
        }
        Ok(Self { c_in, c_out, branches })
    }

    /// Edge-oriented block: `3×3`, `1×1→3×3` with `mid` channels, and the
    /// three scaled edge branches.
    pub fn ecb(c_in: usize, c_out: usize, mid: usize) -> Self {
        let mut branches = vec![
            Branch::Conv(ConvParams::same(c_in, c_out, 3, 1)),
            Branch::Seq {
                expand: ConvParams::same(c_in, mid, 1, 1),
                conv: ConvParams::same(mid, c_out, 3, 1),
            },
        ];
        for kind in [EdgeKind::SobelX, EdgeKind::SobelY, EdgeKind::Laplacian] {
            branches.push(Branch::Edge {
                expand: ConvParams::same(c_in, c_out, 1, 1),
                kind,
                scale: vec![0.0; c_out],
                bias: vec![0.0; c_out],
            });
        }
        Self { c_in, c_out, branches }
    }

    /// `3×3` in parallel with `1×1`.
    pub fn conv3_conv1(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            branches: vec![
                Branch::Conv(ConvParams::same(c_in, c_out, 3, 1)),
                Branch::Conv(ConvParams::same(c_in, c_out, 1, 1)),
            ],
        }
    }

    /// Largest kernel over all branches; the fused kernel size.
    pub fn kernel(&self) -> usize {
        self.branches
            .iter()
            .map(|b| match b {
                Branch::Conv(p) => p.kernel(),
                Branch::Seq { conv, .. } => conv.kernel(),
                Branch::Edge { .. } => 3,
            })
            .max()
            .unwrap_or(1)
    }

    pub fn param_count(&self) -> usize {
        self.param_views("").iter().map(|p| p.data.len()).sum()
    }

    pub(crate) fn param_views<'a>(&'a self, prefix: &str) -> Vec<ParamView<'a>> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let p = format!("{prefix}.branch{i}");
            match b {
                Branch::Conv(c) => out.extend(ParamView::conv(&p, c)),
                Branch::Seq { expand, conv } => {
                    out.extend(ParamView::conv(&format!("{p}.expand"), expand));
                    out.extend(ParamView::conv(&format!("{p}.conv"), conv));
                }
                Branch::Edge {
                    expand, scale, bias, ..
                } => {
                    out.extend(ParamView::conv(&format!("{p}.expand"), expand));
                    out.push(ParamView::vector(format!("{p}.scale"), scale, ParamKind::EdgeScale));
                    out.push(ParamView::vector(format!("{p}.bias"), bias, ParamKind::EdgeBias));
                }
            }
        }
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        fn conv<'a>(c: &'a mut ConvParams, out: &mut Vec<&'a mut [f32]>) {
            out.push(c.weight.data_mut());
            if let Some(b) = c.bias.as_mut() {
                out.push(b.as_mut_slice());
            }
        }
        for b in &mut self.branches {
            match b {
                Branch::Conv(c) => conv(c, &mut out),
                Branch::Seq { expand, conv: c2 } => {
                    conv(expand, &mut out);
                    conv(c2, &mut out);
                }
                Branch::Edge {
                    expand, scale, bias, ..
                } => {
                    conv(expand, &mut out);
                    out.push(scale.as_mut_slice());
                    out.push(bias.as_mut_slice());
                }
            }
        }
        out
    }

    /// Records the multi-branch forward pass. `params` are tape variables in
    /// [`BranchBlock::param_views`] order.
    pub(crate) fn record<T: Real>(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let mut it = params.iter().copied();
        let mut next = || it.next().ok_or_else(|| Error::Graph("branch block ran out of parameters".into()));
        let mut sum: Option<Var> = None;
        for b in &self.branches {
            let y = match b {
                Branch::Conv(p) => {
                    let w = next()?;
                    let bias = if p.bias.is_some() { Some(next()?) } else { None };
                    tape.conv2d(x, w, bias, 1, p.padding, p.groups)?
                }
                Branch::Seq { expand, conv } => {
                    let (w1, b1) = (next()?, expand.bias.is_some().then(&mut next).transpose()?);
                    let (w2, b2) = (next()?, conv.bias.is_some().then(&mut next).transpose()?);
                    let mid = tape.conv2d(x, w1, b1, 1, 0, 1)?;
                    let mid = pad_with_bias(tape, mid, b1, conv.padding)?;
                    tape.conv2d(mid, w2, b2, 1, 0, conv.groups)?
                }
                Branch::Edge { expand, kind, .. } => {
                    let (w1, b1) = (next()?, expand.bias.is_some().then(&mut next).transpose()?);
                    let (scale, bias) = (next()?, next()?);
                    let mid = tape.conv2d(x, w1, b1, 1, 0, 1)?;
                    let mid = pad_with_bias(tape, mid, b1, 1)?;
                    let mask = kind.mask().iter().map(|&m| m as f64).collect();
                    let k = tape.scale_kernel(scale, 3, mask)?;
                    tape.conv2d(mid, k, Some(bias), 1, 0, self.c_out)?
                }
            };
            sum = Some(match sum {
                Some(s) => tape.add(s, y)?,
                None => y,
            });
        }
        sum.ok_or_else(|| Error::Graph("empty branch block".into()))
    }

    /// Runs the multi-branch block on a concrete input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x.clone());
        let params: Vec<Var> = self
            .param_views("")
            .into_iter()
            .map(|p| tape.constant(p.to_tensor()))
            .collect();
        let y = self.record(&mut tape, xv, &params)?;
        Ok(tape.value(y).clone())
    }
}

fn pad_with_bias<T: Real>(tape: &mut Tape<T>, x: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
    if pad == 0 {
        return Ok(x);
    }
    let values = match bias {
        Some(b) => b,
        None => {
            let c = tape.value(x).c();
            tape.constant(TensorBase::zeros([1, c, 1, 1]))
        }
    };
    tape.pad_const(x, values, pad)
}

/// Zero-pads a `1×1` kernel into the centre of a `3×3` one.
pub fn embed_to_3x3(p: &ConvParams) -> Result<ConvParams> {
    match p.kernel() {
        3 => Ok(p.clone()),
        1 => {
            let [o, i, _, _] = p.weight.dims();
            let mut w = Tensor::zeros([o, i, 3, 3]);
            for oo in 0..o {
                for ii in 0..i {
                    w.set([oo, ii, 1, 1], p.weight.at([oo, ii, 0, 0]));
                }
            }
            Ok(ConvParams {
                weight: w,
                bias: p.bias.clone(),
                stride: p.stride,
                padding: p.padding + 1,
                groups: p.groups,
            })
        }
        k => Err(Error::invalid("embed_to_3x3", format!("kernel {k} cannot be embedded in 3×3"))),
    }
}

/// Sums parallel convolutions of identical geometry.
pub fn fuse_parallel(branches: &[ConvParams]) -> Result<ConvParams> {
    let Some(first) = branches.first() else {
        return Err(Error::invalid("fuse_parallel", "no branches"));
    };
    let mut fused = first.clone();
    for b in &branches[1..] {
        if b.weight.dims() != first.weight.dims()
            || b.stride != first.stride
            || b.padding != first.padding
            || b.groups != first.groups
        {
            return Err(Error::shape(
                "fuse_parallel",
                format!("{:?} vs {:?}", b.weight.dims(), first.weight.dims()),
            ));
        }
        for (a, &v) in fused.weight.data_mut().iter_mut().zip(b.weight.data()) {
            *a += v;
        }
        fused.bias = match (fused.bias.take(), &b.bias) {
            (Some(mut acc), Some(bb)) => {
                acc.iter_mut().zip(bb).for_each(|(a, &v)| *a += v);
                Some(acc)
            }
            (Some(acc), None) => Some(acc),
            (None, Some(bb)) => Some(bb.clone()),
            (None, None) => None,
        };
    }
    Ok(fused)
}

/// Grouped kernel expanded to an equivalent dense `(c_out, c_in, k, k)` one.
fn densify(p: &ConvParams) -> ConvParams {
    if p.groups == 1 {
        return p.clone();
    }
    let [c_out, cin_g, kh, kw] = p.weight.dims();
    let c_in = cin_g * p.groups;
    let cout_g = c_out / p.groups;
    let mut w = Tensor::zeros([c_out, c_in, kh, kw]);
    for o in 0..c_out {
        let grp = o / cout_g;
        for ic in 0..cin_g {
            for y in 0..kh {
                for x in 0..kw {
                    w.set([o, grp * cin_g + ic, y, x], p.weight.at([o, ic, y, x]));
                }
            }
        }
    }
    ConvParams {
        weight: w,
        bias: p.bias.clone(),
        stride: p.stride,
        padding: p.padding,
        groups: 1,
    }
}

/// Folds a `1×1` convolution into the following `k×k` one.
pub fn fuse_sequential(first: &ConvParams, second: &ConvParams) -> Result<ConvParams> {
    if first.kernel() != 1 || first.stride != 1 || first.padding != 0 || first.groups != 1 {
        return Err(Error::invalid("fuse_sequential", "first stage must be a dense 1×1, stride 1, pad 0"));
    }
    if first.c_out() != second.c_in() {
        return Err(Error::shape(
            "fuse_sequential",
            format!("first emits {} channels, second expects {}", first.c_out(), second.c_in()),
        ));
    }
    let second = densify(second);
    let [c_out, mid, kh, kw] = second.weight.dims();
    let c_in = first.c_in();
    let mut w = vec![0.0f64; c_out * c_in * kh * kw];
    let mut b: Vec<f64> = match &second.bias {
        Some(b) => b.iter().map(|&v| v as f64).collect(),
        None => vec![0.0; c_out],
    };
    for o in 0..c_out {
        for m in 0..mid {
            let mut tap_sum = 0.0f64;
            for y in 0..kh {
                for x in 0..kw {
                    let w2 = second.weight.at([o, m, y, x]) as f64;
                    tap_sum += w2;
                    for i in 0..c_in {
                        w[((o * c_in + i) * kh + y) * kw + x] += w2 * first.weight.at([m, i, 0, 0]) as f64;
                    }
                }
            }
            if let Some(b1) = &first.bias {
                b[o] += b1[m] as f64 * tap_sum;
            }
        }
    }
    let has_bias = first.bias.is_some() || second.bias.is_some();
    Ok(ConvParams {
        weight: Tensor::new([c_out, c_in, kh, kw], w.into_iter().map(|v| v as f32).collect())?,
        bias: has_bias.then(|| b.into_iter().map(|v| v as f32).collect()),
        stride: 1,
        padding: second.padding,
        groups: 1,
    })
}

/// Collapses a whole block into a single `3×3` convolution.
pub fn fuse_block(b: &BranchBlock) -> Result<ConvParams> {
    if b.kernel() > 3 {
        return Err(Error::invalid("fuse_block", "only 1×1 and 3×3 branches are supported"));
    }
    if let [Branch::Conv(p)] = b.branches.as_slice() {
        if p.kernel() == 3 {
            return Ok(p.clone());
        }
    }
    let convs = b
        .branches
        .iter()
        .map(|br| br.to_conv().and_then(|c| embed_to_3x3(&densify(&c))))
        .collect::<Result<Vec<_>>>()?;
    fuse_parallel(&convs)
}

/// Replaces every branch block in the graph by its fused convolution.
pub fn fuse_model(g: &ModelGraph) -> Result<ModelGraph> {
    let mut out = g.clone();
    for node in &mut out.nodes {
        if let LayerOp::Block(b) = &node.op {
            node.op = LayerOp::Conv(fuse_block(b)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;

    fn ramp(dims: [usize; 4], seed: f32) -> Tensor {
        let mut k = 0.0f32;
        Tensor::from_fn(dims, |_| {
            k += 1.0;
            ((k * 0.37 + seed).sin() * 0.5) as f32
        })
    }

    #[test]
    fn embed_1x1_centres_weight() {
        let p = ConvParams::new(Tensor::new([1, 1, 1, 1], vec![0.7]).unwrap(), Some(vec![0.1]), 1, 0, 1).unwrap();
        let e = embed_to_3x3(&p).unwrap();
        assert_eq!(e.weight.data(), &[0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.bias, Some(vec![0.1]));
        assert_eq!(e.padding, 1);
        let p3 = ConvParams::same(2, 2, 3, 1);
        assert_eq!(embed_to_3x3(&p3).unwrap(), p3);
        assert!(embed_to_3x3(&ConvParams::same(2, 2, 5, 1)).is_err());
    }

    #[test]
    fn embedded_conv_matches_original() {
        let x = ramp([1, 3, 6, 7], 0.2);
        let p = ConvParams::new(ramp([4, 3, 1, 1], 1.0), Some(vec![0.1, -0.2, 0.3, 0.0]), 1, 0, 1).unwrap();
        let a = conv2d(&x, &p).unwrap();
        let b = conv2d(&x, &embed_to_3x3(&p).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn two_identical_branches_double() {
        let p = ConvParams::new(ramp([2, 2, 3, 3], 0.5), Some(vec![0.25, -0.5]), 1, 1, 1).unwrap();
        let f = fuse_parallel(&[p.clone(), p.clone()]).unwrap();
        for (a, b) in f.weight.data().iter().zip(p.weight.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert_eq!(f.bias, Some(vec![0.5, -1.0]));
        assert_eq!(fuse_parallel(std::slice::from_ref(&p)).unwrap(), p);
        assert!(fuse_parallel(&[p, ConvParams::same(2, 3, 3, 1)]).is_err());
    }

    #[test]
    fn sequential_scalar_algebra() {
        let first = ConvParams::new(Tensor::new([1, 1, 1, 1], vec![2.0]).unwrap(), None, 1, 0, 1).unwrap();
        let mut w2 = Tensor::zeros([1, 1, 3, 3]);
        w2.set([0, 0, 1, 1], 1.0);
        let second = ConvParams::new(w2, Some(vec![1.0]), 1, 1, 1).unwrap();
        let f = fuse_sequential(&first, &second).unwrap();
        assert_eq!(f.weight.data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.bias, Some(vec![1.0]));
    }

    #[test]
    fn sequential_identity_mixing() {
        let mut w1 = Tensor::zeros([3, 3, 1, 1]);
        for i in 0..3 {
            w1.set([i, i, 0, 0], 1.0);
        }
        let first = ConvParams::new(w1, Some(vec![0.0; 3]), 1, 0, 1).unwrap();
        let second = ConvParams::new(ramp([2, 3, 3, 3], 0.1), Some(vec![0.3, 0.4]), 1, 1, 1).unwrap();
        assert_eq!(fuse_sequential(&first, &second).unwrap(), second);
        let bad = ConvParams::same(2, 2, 3, 1);
        assert!(fuse_sequential(&first, &bad).is_err());
    }

    #[test]
    fn single_branch_block_is_unchanged() {
        let p = ConvParams::new(ramp([2, 2, 3, 3], 0.9), Some(vec![0.1, 0.2]), 1, 1, 1).unwrap();
        let b = BranchBlock::new(2, 2, vec![Branch::Conv(p.clone())]).unwrap();
        assert_eq!(fuse_block(&b).unwrap(), p);
    }

    #[test]
    fn conv3_conv1_block_equals_embed_sum() {
        let p3 = ConvParams::new(ramp([2, 2, 3, 3], 0.9), Some(vec![0.1, 0.2]), 1, 1, 1).unwrap();
        let p1 = ConvParams::new(ramp([2, 2, 1, 1], 0.3), Some(vec![-0.1, 0.05]), 1, 0, 1).unwrap();
        let b = BranchBlock::new(2, 2, vec![Branch::Conv(p3.clone()), Branch::Conv(p1.clone())]).unwrap();
        let want = fuse_parallel(&[p3, embed_to_3x3(&p1).unwrap()]).unwrap();
        assert_eq!(fuse_block(&b).unwrap(), want);
    }

    #[test]
    fn block_validation() {
        assert!(BranchBlock::new(2, 2, vec![]).is_err());
        assert!(BranchBlock::new(2, 3, vec![Branch::Conv(ConvParams::same(2, 2, 3, 1))]).is_err());
        let unpadded = ConvParams::new(Tensor::zeros([2, 2, 3, 3]), None, 1, 0, 1).unwrap();
        assert!(BranchBlock::new(2, 2, vec![Branch::Conv(unpadded)]).is_err());
    }
}
