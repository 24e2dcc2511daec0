//! Dense row-major tensors and the scalar abstraction shared by every kernel.
//!
//! Kernels are generic over [`Real`] so the same code runs in `f32` for
//! training and inference and in `f64` for gradient checking.

use std::borrow::Cow;
use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

use crate::quantizer::QTensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },
    #[error("{op}: invalid parameter: {detail}")]
    Param { op: &'static str, detail: String },
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, axis: impl Into<String>, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        axis: axis.into(),
        detail: detail.into(),
    }
}

pub(crate) fn param_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Param {
        op,
        detail: detail.into(),
    }
}

/// Floating-point element type usable by the layer kernels.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + Sum + 'static {
    fn lit(v: f64) -> Self;
    fn to_f32(self) -> f32;
    fn to_f64(self) -> f64;
    /// Views an `f32` tensor as `Self`, borrowing when no conversion is needed.
    fn from_f32_tensor(t: &Tensor<f32>) -> Cow<'_, Tensor<Self>>;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32_tensor(t: &Tensor<f32>) -> Cow<'_, Tensor<f32>> {
        Cow::Borrowed(t)
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32_tensor(t: &Tensor<f32>) -> Cow<'_, Tensor<f64>> {
        Cow::Owned(t.cast())
    }
}

/// Dense tensor, row-major, images laid out as (N, C, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(dim_err("tensor", "shape", format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err(
                "tensor",
                "data",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::default())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err(
                "reshape",
                "shape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Shape as (N, C, H, W), failing for anything but rank 4.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(dim_err(op, "rank", format!("expected 4-D (N,C,H,W), got {:?}", self.shape))),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }

    /// Slices sample `i` out of the batch axis, keeping a batch dim of 1.
    pub fn batch_item(&self, i: usize) -> Tensor<T> {
        let per: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    /// Concatenates tensors along the batch axis. All trailing dims must agree.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| param_err("stack", "no tensors to stack"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return Err(dim_err(
                    "stack",
                    "trailing dims",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Tensor { shape, data })
    }
}

/// Element type tag of a stored parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    /// 8-bit affine codes (0..=255) with per-tensor scale and zero point.
    I8,
}

/// A parameter tensor as held by a graph: plain float32 or int8 with qparams.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    I8(QTensor),
}

impl StoredTensor {
    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::I8(_) => DType::I8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::I8(q) => q.shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&Tensor<f32>> {
        match self {
            StoredTensor::F32(t) => Some(t),
            StoredTensor::I8(_) => None,
        }
    }

    pub fn as_f32_mut(&mut self) -> Option<&mut Tensor<f32>> {
        match self {
            StoredTensor::F32(t) => Some(t),
            StoredTensor::I8(_) => None,
        }
    }

    /// Float view in the kernel's element type; int8 tensors are dequantized.
    pub fn view<T: Real>(&self) -> Cow<'_, Tensor<T>> {
        match self {
            StoredTensor::F32(t) => T::from_f32_tensor(t),
            StoredTensor::I8(q) => Cow::Owned(q.dequantize().cast()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new([2, 3], vec![0.0f32; 6]).is_ok());
        let err = Tensor::new([2, 3], vec![0.0f32; 5]).unwrap_err();
        assert!(matches!(err, TensorError::Dimension { .. }));
        assert!(Tensor::new([0, 3], Vec::<f32>::new()).is_err());
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::from_fn([1, 2, 2], |i| i as f32);
        let b = Tensor::from_fn([1, 2, 2], |i| 10.0 + i as f32);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.batch_item(0), a);
        assert_eq!(s.batch_item(1), b);
        let c = Tensor::from_fn([1, 3, 2], |i| i as f32);
        assert!(Tensor::stack(&[a, c]).is_err());
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::from_fn([3], |i| i as f32 * 0.25);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}
