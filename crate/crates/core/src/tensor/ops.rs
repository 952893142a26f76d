use super::tape::{check_shuffle, eval_op, Op};
use super::{Real, Tensor, TensorBase};
use crate::error::{Error, Result};

/// Weights and hyper-parameters of one (possibly grouped) convolution.
///
/// `weight` has dims `(c_out, c_in / groups, k_h, k_w)`; the same layout is
/// used for transposed convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Option<Vec<f32>>, stride: usize, padding: usize, groups: usize) -> Result<Self> {
        if stride == 0 || groups == 0 {
            return Err(Error::invalid("conv_params", "stride and groups must be positive"));
        }
        if weight.n() % groups != 0 {
            return Err(Error::shape(
                "conv_params",
                format!("c_out {} not divisible by groups {groups}", weight.n()),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != weight.n() {
                return Err(Error::shape(
                    "conv_params",
                    format!("bias length {} vs c_out {}", b.len(), weight.n()),
                ));
            }
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            groups,
        })
    }

    /// Stride-1 convolution with "same" zero padding and a zero bias.
    pub fn same(c_in: usize, c_out: usize, k: usize, groups: usize) -> Self {
        Self {
            weight: Tensor::zeros([c_out, c_in / groups, k, k]),
            bias: Some(vec![0.0; c_out]),
            stride: 1,
            padding: k / 2,
            groups,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.n()
    }

    pub fn c_in(&self) -> usize {
        self.weight.c() * self.groups
    }

    pub fn kernel(&self) -> usize {
        self.weight.h()
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub(crate) fn bias_tensor<T: Real>(&self) -> Option<TensorBase<T>> {
        self.bias
            .as_ref()
            .map(|b| TensorBase::new([1, b.len(), 1, 1], b.iter().map(|&v| T::of(v as f64)).collect()).unwrap())
    }
}

/// Pointwise nonlinearity applied after a convolution.
#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    /// One learnable slope per channel.
    Prelu(Vec<f32>),
}

/// Direct convolution with symmetric zero padding.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let op = Op::Conv2d {
        stride: p.stride,
        padding: p.padding,
        groups: p.groups,
    };
    match p.bias_tensor() {
        Some(b) => eval_op(&op, &[input, &p.weight, &b]),
        None => eval_op(&op, &[input, &p.weight]),
    }
}

/// Transposed convolution; output size `(h − 1)·stride + k − 2·padding`.
pub fn transposed_conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let op = Op::TransposedConv2d {
        stride: p.stride,
        padding: p.padding,
        groups: p.groups,
    };
    match p.bias_tensor() {
        Some(b) => eval_op(&op, &[input, &p.weight, &b]),
        None => eval_op(&op, &[input, &p.weight]),
    }
}

pub fn activation(input: &Tensor, kind: &Activation) -> Result<Tensor> {
    match kind {
        Activation::Relu => eval_op(&Op::Relu, &[input]),
        Activation::LeakyRelu(a) => eval_op(&Op::LeakyRelu { slope: *a as f64 }, &[input]),
        Activation::Prelu(a) => {
            if a.len() != input.c() {
                return Err(Error::shape(
                    "activation",
                    format!("prelu has {} slopes for {} channels", a.len(), input.c()),
                ));
            }
            let a = Tensor::new([1, a.len(), 1, 1], a.clone())?;
            eval_op(&Op::Prelu, &[input, &a])
        }
    }
}

/// Depth-to-space (or its inverse) with DCR channel order.
pub fn pixel_shuffle<T: Real>(input: &TensorBase<T>, r: usize, inverse: bool) -> Result<TensorBase<T>> {
    check_shuffle(input.dims(), r, inverse)?;
    let op = if inverse { Op::PixelUnshuffle { r } } else { Op::PixelShuffle { r } };
    eval_op(&op, &[input])
}

/// Half-pixel-centre bilinear upsampling by an integer factor.
pub fn bilinear_resize<T: Real>(input: &TensorBase<T>, scale: usize) -> Result<TensorBase<T>> {
    eval_op(&Op::Bilinear { scale }, &[input])
}

pub fn concat_channels<T: Real>(inputs: &[&TensorBase<T>]) -> Result<TensorBase<T>> {
    eval_op(&Op::Concat, inputs)
}

pub fn add<T: Real>(a: &TensorBase<T>, b: &TensorBase<T>) -> Result<TensorBase<T>> {
    eval_op(&Op::Add, &[a, b])
}

pub fn clip<T: Real>(input: &TensorBase<T>, lo: f64, hi: f64) -> Result<TensorBase<T>> {
    eval_op(&Op::Clip { lo, hi }, &[input])
}

pub fn channel_slice<T: Real>(input: &TensorBase<T>, start: usize, len: usize) -> Result<TensorBase<T>> {
    eval_op(&Op::ChannelSlice { start, len }, &[input])
}

pub fn channel_repeat<T: Real>(input: &TensorBase<T>, r: usize) -> Result<TensorBase<T>> {
    eval_op(&Op::ChannelRepeat { r }, &[input])
}
