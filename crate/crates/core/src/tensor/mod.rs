//! NCHW tensors, forward kernels and reverse-mode differentiation.
//!
//! Every kernel is generic over [`Real`] so the same code runs in `f32` for
//! training and inference and in `f64` for gradient checking.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
pub mod tape;

pub use ops::*;
pub use tape::{Gradients, Op, Tape, Var};

/// Scalar element type accepted by the kernels.
pub trait Real:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Tensor dimensions in `(n, c, h, w)` order.
pub type Dims = [usize; 4];

/// Rank-4 NCHW array stored row-major with `w` varying fastest.
#[derive(Clone, PartialEq)]
pub struct TensorBase<T> {
    dims: Dims,
    data: Vec<T>,
}

/// The working precision used everywhere outside gradient checks.
pub type Tensor = TensorBase<f32>;
/// Shadow precision used by finite-difference checks.
pub type Tensor64 = TensorBase<f64>;

impl<T: Real> TensorBase<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        let numel = numel(dims);
        if data.len() != numel {
            return Err(Error::shape(
                "tensor",
                format!("dims {dims:?} need {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Self {
            dims,
            data: vec![value; numel(dims)],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(numel(dims));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([ni, ci, y, x]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, [n, c, y, x]: [usize; 4]) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.index(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    /// Contiguous `h·w` plane for one `(n, c)` pair.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Converts element type, e.g. into the `f64` shadow for gradient checks.
    pub fn cast<U: Real>(&self) -> TensorBase<U> {
        TensorBase {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Selects batch items `[start, start + len)`.
    pub fn batch_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n() {
            return Err(Error::shape(
                "batch_slice",
                format!("range {start}..{} exceeds n={}", start + len, self.n()),
            ));
        }
        let per = self.c() * self.h() * self.w();
        Ok(Self {
            dims: [len, self.c(), self.h(), self.w()],
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }

    /// Stacks tensors with identical `(c, h, w)` along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::invalid("stack", "empty list"));
        };
        let [_, c, h, w] = first.dims;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.dims, first.dims),
                ));
            }
            n += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            dims: [n, c, h, w],
            data,
        })
    }
}

impl<T: Real> Debug for TensorBase<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[inline]
pub fn numel(dims: Dims) -> usize {
    dims.iter().product()
}
