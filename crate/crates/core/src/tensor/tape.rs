//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every value produced during a recorded forward pass lives on the tape
//! together with the op that produced it and the ids of its inputs. The
//! backward sweep walks the list in reverse and accumulates vector-Jacobian
//! products into the inputs of every node that needs a gradient.

use super::kernels::{self, ConvGeom};
use super::{Dims, Real, TensorBase};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation kinds. Per-channel vectors (bias, PReLU slopes,
/// padding values, kernel scales) are carried as `(1, c, 1, 1)` tensors.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf { requires_grad: bool },
    /// Inputs: `x, w[, b]`.
    Conv2d { stride: usize, padding: usize, groups: usize },
    /// Inputs: `x, w[, b]`; weight layout `(c_out, c_in/groups, k, k)`.
    TransposedConv2d { stride: usize, padding: usize, groups: usize },
    Relu,
    LeakyRelu { slope: f64 },
    /// Inputs: `x, a`.
    Prelu,
    PixelShuffle { r: usize },
    PixelUnshuffle { r: usize },
    Bilinear { scale: usize },
    Concat,
    Add,
    Clip { lo: f64, hi: f64 },
    ChannelRepeat { r: usize },
    ChannelSlice { start: usize, len: usize },
    /// Inputs: `x, values`.
    PadConst { pad: usize },
    /// `(1, c, 1, 1)` scales times a fixed `k×k` mask gives `(c, 1, k, k)`.
    ScaleKernel { k: usize, mask: Vec<f64> },
    /// Reduction to a `(1, 1, 1, 1)` scalar.
    Sum,
}

struct Node<T> {
    op: Op,
    inputs: Vec<Var>,
    value: TensorBase<T>,
    needs_grad: bool,
}

/// Ordered record of executed ops.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn vec_dims(c: usize) -> Dims {
    [1, c, 1, 1]
}

fn expect_vec<T: Real>(op: &'static str, t: &TensorBase<T>, c: usize) -> Result<()> {
    if t.dims() != vec_dims(c) {
        return Err(Error::shape(op, format!("expected per-channel vector of {c}, got {:?}", t.dims())));
    }
    Ok(())
}

/// Evaluates one op on concrete inputs. Shared by recording and replay.
pub(crate) fn eval_op<T: Real>(op: &Op, inputs: &[&TensorBase<T>]) -> Result<TensorBase<T>> {
    let arity = |n: usize, name: &'static str| -> Result<()> {
        if inputs.len() != n {
            return Err(Error::invalid(name, format!("expected {n} inputs, got {}", inputs.len())));
        }
        Ok(())
    };
    match op {
        Op::Leaf { .. } => Err(Error::invalid("tape", "leaf has no forward rule")),
        Op::Conv2d { stride, padding, groups } | Op::TransposedConv2d { stride, padding, groups } => {
            let transposed = matches!(op, Op::TransposedConv2d { .. });
            let name = if transposed { "transposed_conv2d" } else { "conv2d" };
            if inputs.len() != 2 && inputs.len() != 3 {
                return Err(Error::invalid(name, "expected x, w and optional bias"));
            }
            let (x, w) = (inputs[0], inputs[1]);
            let g = if transposed {
                ConvGeom::transposed(x.dims(), w.dims(), *stride, *padding, *groups)?
            } else {
                ConvGeom::conv(x.dims(), w.dims(), *stride, *padding, *groups)?
            };
            let b = match inputs.get(2) {
                Some(b) => {
                    expect_vec(name, b, g.c_out)?;
                    Some(b.data())
                }
                None => None,
            };
            let out = if transposed {
                kernels::transposed_forward(&g, x.data(), w.data(), b)
            } else {
                kernels::conv2d_forward(&g, x.data(), w.data(), b)
            };
            TensorBase::new(g.out_dims(), out)
        }
        Op::Relu => {
            arity(1, "relu")?;
            // Written so that NaN passes through instead of being zeroed.
            Ok(inputs[0].map(|v| if v <= T::zero() { T::zero() } else { v }))
        }
        Op::LeakyRelu { slope } => {
            arity(1, "leaky_relu")?;
            let s = T::of(*slope);
            Ok(inputs[0].map(|v| if v > T::zero() { v } else { s * v }))
        }
        Op::Prelu => {
            arity(2, "prelu")?;
            let (x, a) = (inputs[0], inputs[1]);
            expect_vec("prelu", a, x.c())?;
            let plane = x.h() * x.w();
            let c = x.c();
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| if v > T::zero() { v } else { a.data()[(i / plane) % c] * v })
                .collect();
            TensorBase::new(x.dims(), data)
        }
        Op::PixelShuffle { r } | Op::PixelUnshuffle { r } => {
            arity(1, "pixel_shuffle")?;
            let inverse = matches!(op, Op::PixelUnshuffle { .. });
            let x = inputs[0];
            check_shuffle(x.dims(), *r, inverse)?;
            let (dims, data) = kernels::pixel_shuffle(x.dims(), x.data(), *r, inverse);
            TensorBase::new(dims, data)
        }
        Op::Bilinear { scale } => {
            arity(1, "bilinear_resize")?;
            if *scale == 0 {
                return Err(Error::invalid("bilinear_resize", "scale must be ≥ 1"));
            }
            let (dims, data) = kernels::bilinear_forward(inputs[0].dims(), inputs[0].data(), *scale);
            TensorBase::new(dims, data)
        }
        Op::Concat => {
            if inputs.is_empty() {
                return Err(Error::invalid("concat_channels", "no inputs"));
            }
            let d0 = inputs[0].dims();
            for t in inputs {
                let d = t.dims();
                if d[0] != d0[0] || d[2] != d0[2] || d[3] != d0[3] {
                    return Err(Error::shape("concat_channels", format!("{d:?} vs {d0:?}")));
                }
            }
            let parts: Vec<_> = inputs.iter().map(|t| (t.dims(), t.data())).collect();
            let (dims, data) = kernels::concat(&parts);
            TensorBase::new(dims, data)
        }
        Op::Add => {
            arity(2, "add")?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.dims() != b.dims() {
                return Err(Error::shape("add", format!("{:?} vs {:?}", a.dims(), b.dims())));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
            TensorBase::new(a.dims(), data)
        }
        Op::Clip { lo, hi } => {
            arity(1, "clip")?;
            if lo > hi {
                return Err(Error::invalid("clip", format!("lo {lo} > hi {hi}")));
            }
            let (lo, hi) = (T::of(*lo), T::of(*hi));
            Ok(inputs[0].map(|v| if v < lo { lo } else if v > hi { hi } else { v }))
        }
        Op::ChannelRepeat { r } => {
            arity(1, "channel_repeat")?;
            if *r == 0 {
                return Err(Error::invalid("channel_repeat", "repeat count must be ≥ 1"));
            }
            let (dims, data) = kernels::channel_repeat(inputs[0].dims(), inputs[0].data(), *r);
            TensorBase::new(dims, data)
        }
        Op::ChannelSlice { start, len } => {
            arity(1, "channel_slice")?;
            let x = inputs[0];
            if start + len > x.c() {
                return Err(Error::shape(
                    "channel_slice",
                    format!("{start}..{} out of {} channels", start + len, x.c()),
                ));
            }
            let (dims, data) = kernels::channel_slice(x.dims(), x.data(), *start, *len);
            TensorBase::new(dims, data)
        }
        Op::PadConst { pad } => {
            arity(2, "pad_const")?;
            let (x, v) = (inputs[0], inputs[1]);
            expect_vec("pad_const", v, x.c())?;
            let (dims, data) = kernels::pad_const(x.dims(), x.data(), *pad, v.data());
            TensorBase::new(dims, data)
        }
        Op::ScaleKernel { k, mask } => {
            arity(1, "scale_kernel")?;
            if mask.len() != k * k {
                return Err(Error::invalid("scale_kernel", "mask must hold k·k values"));
            }
            let s = inputs[0];
            if s.n() != 1 || s.h() != 1 || s.w() != 1 {
                return Err(Error::shape("scale_kernel", format!("scale dims {:?}", s.dims())));
            }
            let c = s.c();
            let mut data = Vec::with_capacity(c * k * k);
            for &sv in s.data() {
                data.extend(mask.iter().map(|&m| sv * T::of(m)));
            }
            TensorBase::new([c, 1, *k, *k], data)
        }
        Op::Sum => {
            arity(1, "sum")?;
            TensorBase::new([1, 1, 1, 1], vec![inputs[0].sum()])
        }
    }
}

pub(crate) fn check_shuffle(dims: Dims, r: usize, inverse: bool) -> Result<()> {
    if r == 0 {
        return Err(Error::invalid("pixel_shuffle", "factor must be positive"));
    }
    if !inverse && dims[1] % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by r²={}", dims[1], r * r),
        ));
    }
    if inverse && (dims[2] % r != 0 || dims[3] % r != 0) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial {}x{} not divisible by {r}", dims[2], dims[3]),
        ));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &TensorBase<T> {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Records a constant or parameter.
    pub fn leaf(&mut self, value: TensorBase<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf { requires_grad },
            inputs: Vec::new(),
            value,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: TensorBase<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: TensorBase<T>) -> Var {
        self.leaf(value, true)
    }

    /// Evaluates `op` on recorded inputs and appends the result.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if matches!(op, Op::Leaf { .. }) {
            return Err(Error::invalid("tape", "use leaf() to record leaves"));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::invalid("tape", format!("unknown var {}", bad.0)));
        }
        let values: Vec<&TensorBase<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = eval_op(&op, &values)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(Op::Conv2d { stride, padding, groups }, &ins)
    }

    pub fn transposed_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(Op::TransposedConv2d { stride, padding, groups }, &ins)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Relu, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(Op::LeakyRelu { slope }, &[x])
    }

    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        self.apply(Op::Prelu, &[x, a])
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.apply(Op::PixelShuffle { r }, &[x])
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.apply(Op::PixelUnshuffle { r }, &[x])
    }

    pub fn bilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        self.apply(Op::Bilinear { scale }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(Op::Concat, xs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Op::Clip { lo, hi }, &[x])
    }

    pub fn channel_repeat(&mut self, x: Var, r: usize) -> Result<Var> {
        self.apply(Op::ChannelRepeat { r }, &[x])
    }

    pub fn channel_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::ChannelSlice { start, len }, &[x])
    }

    pub fn pad_const(&mut self, x: Var, values: Var, pad: usize) -> Result<Var> {
        self.apply(Op::PadConst { pad }, &[x, values])
    }

    pub fn scale_kernel(&mut self, scale: Var, k: usize, mask: Vec<f64>) -> Result<Var> {
        self.apply(Op::ScaleKernel { k, mask }, &[scale])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum, &[x])
    }

    /// Re-executes every recorded op from its recorded inputs and checks
    /// that the outputs are bit-identical to what was recorded.
    pub fn replay(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            self.check_inputs(i)?;
            let values: Vec<&TensorBase<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let again = eval_op(&node.op, &values)?;
            let same = again.dims() == node.value.dims()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
            if !same {
                return Err(Error::TapeCorrupt {
                    node: i,
                    detail: format!("{:?} replay differs from recorded output", node.op),
                });
            }
        }
        Ok(())
    }

    fn check_inputs(&self, i: usize) -> Result<()> {
        if let Some(v) = self.nodes[i].inputs.iter().find(|v| v.0 >= i) {
            return Err(Error::TapeCorrupt {
                node: i,
                detail: format!("input {} not recorded before use", v.0),
            });
        }
        Ok(())
    }

    /// Reverse sweep seeded with `seed` as the gradient of `output`.
    pub fn backward(&self, output: Var, seed: TensorBase<T>) -> Result<Gradients<T>> {
        self.backward_multi(vec![(output, seed)])
    }

    /// Reverse sweep with several seeded outputs; seeds on the same var add.
    pub fn backward_multi(&self, seeds: Vec<(Var, TensorBase<T>)>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward", "empty tape"));
        }
        let mut grads: Vec<Option<TensorBase<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, seed) in seeds {
            if v.0 >= self.nodes.len() {
                return Err(Error::invalid("backward", format!("unknown var {}", v.0)));
            }
            if seed.dims() != self.nodes[v.0].value.dims() {
                return Err(Error::shape(
                    "backward",
                    format!("seed {:?} vs output {:?}", seed.dims(), self.nodes[v.0].value.dims()),
                ));
            }
            accumulate(&mut grads[v.0], seed);
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf { .. }) || !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.check_inputs(i)?;
            let contribs = self.vjp(i, &gy)?;
            grads[i] = Some(gy);
            for (input, g) in node.inputs.iter().zip(contribs) {
                if let Some(g) = g {
                    if g.dims() != self.nodes[input.0].value.dims() {
                        return Err(Error::TapeCorrupt {
                            node: i,
                            detail: format!("gradient dims {:?} do not match input {}", g.dims(), input.0),
                        });
                    }
                    accumulate(&mut grads[input.0], g);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products for every input of node `i`.
    fn vjp(&self, i: usize, gy: &TensorBase<T>) -> Result<Vec<Option<TensorBase<T>>>> {
        let node = &self.nodes[i];
        let want = |k: usize| self.nodes[node.inputs[k].0].needs_grad;
        let val = |k: usize| &self.nodes[node.inputs[k].0].value;
        let out = match &node.op {
            Op::Leaf { .. } => Vec::new(),
            Op::Conv2d { stride, padding, groups } | Op::TransposedConv2d { stride, padding, groups } => {
                let transposed = matches!(node.op, Op::TransposedConv2d { .. });
                let (x, w) = (val(0), val(1));
                let g = if transposed {
                    ConvGeom::transposed(x.dims(), w.dims(), *stride, *padding, *groups)?
                } else {
                    ConvGeom::conv(x.dims(), w.dims(), *stride, *padding, *groups)?
                };
                let gx = want(0).then(|| {
                    let d = if transposed {
                        kernels::transposed_backward_input(&g, w.data(), gy.data())
                    } else {
                        kernels::conv2d_backward_input(&g, w.data(), gy.data())
                    };
                    TensorBase::new(x.dims(), d)
                });
                let gw = want(1).then(|| {
                    let d = if transposed {
                        kernels::transposed_backward_weight(&g, x.data(), gy.data())
                    } else {
                        kernels::conv2d_backward_weight(&g, x.data(), gy.data())
                    };
                    TensorBase::new(w.dims(), d)
                });
                let mut v = vec![gx.transpose()?, gw.transpose()?];
                if node.inputs.len() == 3 {
                    let gb = want(2).then(|| TensorBase::new(vec_dims(g.c_out), kernels::channel_sum(gy.dims(), gy.data())));
                    v.push(gb.transpose()?);
                }
                v
            }
            Op::Relu => {
                let x = val(0);
                vec![Some(zip_map(gy, x, |g, x| if x > T::zero() { g } else { T::zero() }))]
            }
            Op::LeakyRelu { slope } => {
                let s = T::of(*slope);
                vec![Some(zip_map(gy, val(0), |g, x| if x > T::zero() { g } else { s * g }))]
            }
            Op::Prelu => {
                let (x, a) = (val(0), val(1));
                let plane = x.h() * x.w();
                let c = x.c();
                let gx = want(0).then(|| {
                    let d = gy
                        .data()
                        .iter()
                        .zip(x.data())
                        .enumerate()
                        .map(|(j, (&g, &xv))| if xv > T::zero() { g } else { a.data()[(j / plane) % c] * g })
                        .collect();
                    TensorBase::new(x.dims(), d)
                });
                let ga = want(1).then(|| {
                    let mut d = vec![T::zero(); c];
                    for (j, (&g, &xv)) in gy.data().iter().zip(x.data()).enumerate() {
                        if xv <= T::zero() {
                            d[(j / plane) % c] += g * xv;
                        }
                    }
                    TensorBase::new(a.dims(), d)
                });
                vec![gx.transpose()?, ga.transpose()?]
            }
            Op::PixelShuffle { r } => {
                let (dims, d) = kernels::pixel_shuffle(gy.dims(), gy.data(), *r, true);
                vec![Some(TensorBase::new(dims, d)?)]
            }
            Op::PixelUnshuffle { r } => {
                let (dims, d) = kernels::pixel_shuffle(gy.dims(), gy.data(), *r, false);
                vec![Some(TensorBase::new(dims, d)?)]
            }
            Op::Bilinear { scale } => {
                let x = val(0);
                vec![Some(TensorBase::new(x.dims(), kernels::bilinear_backward(x.dims(), gy.data(), *scale))?)]
            }
            Op::Concat => {
                let mut start = 0;
                let mut v = Vec::with_capacity(node.inputs.len());
                for k in 0..node.inputs.len() {
                    let c = val(k).c();
                    if want(k) {
                        let (dims, d) = kernels::channel_slice(gy.dims(), gy.data(), start, c);
                        v.push(Some(TensorBase::new(dims, d)?));
                    } else {
                        v.push(None);
                    }
                    start += c;
                }
                v
            }
            Op::Add => vec![want(0).then(|| gy.clone()), want(1).then(|| gy.clone())],
            Op::Clip { lo, hi } => {
                let (lo, hi) = (T::of(*lo), T::of(*hi));
                vec![Some(zip_map(gy, val(0), |g, x| if x >= lo && x <= hi { g } else { T::zero() }))]
            }
            Op::ChannelRepeat { r } => {
                let x = val(0);
                vec![Some(TensorBase::new(x.dims(), kernels::channel_repeat_backward(x.dims(), gy.data(), *r))?)]
            }
            Op::ChannelSlice { start, len } => {
                let x = val(0);
                vec![Some(TensorBase::new(
                    x.dims(),
                    kernels::channel_slice_backward(x.dims(), gy.data(), *start, *len),
                )?)]
            }
            Op::PadConst { pad } => {
                let (x, v) = (val(0), val(1));
                let (gx, gv) = kernels::pad_const_backward(x.dims(), gy.data(), *pad);
                vec![
                    want(0).then(|| TensorBase::new(x.dims(), gx)).transpose()?,
                    want(1).then(|| TensorBase::new(v.dims(), gv)).transpose()?,
                ]
            }
            Op::ScaleKernel { k, mask } => {
                let s = val(0);
                let kk = k * k;
                let d = (0..s.c())
                    .map(|c| {
                        gy.data()[c * kk..(c + 1) * kk]
                            .iter()
                            .zip(mask)
                            .fold(T::zero(), |acc, (&g, &m)| acc + g * T::of(m))
                    })
                    .collect();
                vec![Some(TensorBase::new(s.dims(), d)?)]
            }
            Op::Sum => {
                let x = val(0);
                vec![Some(TensorBase::full(x.dims(), gy.data()[0]))]
            }
        };
        Ok(out)
    }
}

fn zip_map<T: Real>(gy: &TensorBase<T>, x: &TensorBase<T>, f: impl Fn(T, T) -> T) -> TensorBase<T> {
    let data = gy.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
    TensorBase::new(x.dims(), data).expect("gradient dims follow primal dims")
}

fn accumulate<T: Real>(slot: &mut Option<TensorBase<T>>, g: TensorBase<T>) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Gradients indexed by tape variable.
pub struct Gradients<T = f32> {
    grads: Vec<Option<TensorBase<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&TensorBase<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<TensorBase<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
