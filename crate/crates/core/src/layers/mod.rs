//! Forward-only layer kernels for both dtypes.
//!
//! Kernels are generic over [`Element`]. Every hyperparameter (epsilon,
//! coefficients, shift factors, `1/n`) is an `f32` in the layer configs and
//! reaches element data only through [`Element::scale`], which for half data
//! is `h_scale_by_float`. The configs have no half-typed fields, so a layer
//! cannot hold a scalar that has already been rounded to half.
//!
//! Each kernel has a slice-level `*_into` form used by the engine's arena and
//! a tensor-level `*_forward` wrapper that checks shapes and dispatches on
//! dtype.

mod accum;
mod activation;
mod batchnorm;
mod conv;
mod elementwise;
mod inner_product;
mod pool;

pub use accum::{accumulate, dot, AccumPolicy};
pub use activation::{relu_forward, relu_in_place, relu_into, softmax_forward, softmax_into, softmax_slice};
pub use batchnorm::{
    batchnorm_forward, batchnorm_into, grouped_mean, shifted_variance, BatchNormConfig, ShiftPolicy, BATCHNORM_LEAF,
};
pub use conv::{conv_forward, conv_into, conv_output_shape, ConvConfig};
pub use elementwise::{eltwise_forward, eltwise_into, scale_forward, scale_in_place, EltwiseConfig, ScaleConfig};
pub use inner_product::{inner_product_forward, inner_product_into, InnerProductConfig};
pub use pool::{pool_forward, pool_into, pool_output_shape, PoolConfig, PoolMode};

use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fp16::{f32_to_f16, h_add, h_div, h_exp, h_mul, h_scale_by_float, h_sub, HalfBits};
use crate::tensor::{Dtype, Shape, Tensor, TensorData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("layer `{layer}`: {message}")]
    Shape { layer: String, message: String },
    #[error("layer `{layer}`: dtype mismatch, expected {expected} got {got}")]
    Dtype { layer: String, expected: Dtype, got: Dtype },
    #[error("layer `{layer}`: invalid config: {message}")]
    Config { layer: String, message: String },
    #[error("layer `{layer}`: reduction over an empty sequence")]
    Empty { layer: String },
}

impl LayerError {
    pub(crate) fn shape(layer: &str, message: impl Into<String>) -> Self {
        LayerError::Shape { layer: layer.to_string(), message: message.into() }
    }

    pub(crate) fn config(layer: &str, message: impl Into<String>) -> Self {
        LayerError::Config { layer: layer.to_string(), message: message.into() }
    }
}

/// Layer kinds needed by LeNet, AlexNet-style and ResNet-style networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Convolution,
    Pooling(PoolMode),
    #[serde(rename = "relu")]
    ReLU,
    InnerProduct,
    BatchNorm,
    Scale,
    Eltwise,
    Softmax,
}

impl LayerKind {
    /// Layers that may write their output over their input.
    pub fn in_place_eligible(self) -> bool {
        matches!(self, LayerKind::ReLU | LayerKind::Scale)
    }
}

/// Arithmetic on one tensor element type.
///
/// For `f32` these are the native operations. For [`HalfBits`] each one is a
/// single rounded binary16 operation.
pub trait Element: Copy + PartialEq + Debug + Send + Sync + 'static {
    const DTYPE: Dtype;
    const ZERO: Self;

    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    fn div(self, rhs: Self) -> Self;
    /// Multiplies by a single-precision scalar, rounding once.
    fn scale(self, s: f32) -> Self;
    /// exp computed in single precision and rounded once.
    fn exp(self) -> Self;
    fn widen(self) -> f32;
    /// Rounds a single into this type. Used for dtype conversion only.
    fn narrow(x: f32) -> Self;

    fn slice(data: &TensorData) -> Option<&[Self]>;
    fn slice_mut(data: &mut TensorData) -> Option<&mut [Self]>;
    fn wrap(values: Vec<Self>) -> TensorData;

    #[inline]
    fn max(self, other: Self) -> Self {
        if other.widen() > self.widen() {
            other
        } else {
            self
        }
    }
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const ZERO: Self = 0.0;

    #[inline]
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
    #[inline]
    fn scale(self, s: f32) -> Self {
        self * s
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn widen(self) -> f32 {
        self
    }
    #[inline]
    fn narrow(x: f32) -> Self {
        x
    }

    fn slice(data: &TensorData) -> Option<&[Self]> {
        match data {
            TensorData::F32(v) => Some(v),
            TensorData::F16(_) => None,
        }
    }

    fn slice_mut(data: &mut TensorData) -> Option<&mut [Self]> {
        match data {
            TensorData::F32(v) => Some(v),
            TensorData::F16(_) => None,
        }
    }

    fn wrap(values: Vec<Self>) -> TensorData {
        TensorData::F32(values)
    }
}

impl Element for HalfBits {
    const DTYPE: Dtype = Dtype::F16;
    const ZERO: Self = HalfBits::ZERO;

    #[inline]
    fn add(self, rhs: Self) -> Self {
        h_add(self, rhs)
    }
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        h_sub(self, rhs)
    }
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        h_mul(self, rhs)
    }
    #[inline]
    fn div(self, rhs: Self) -> Self {
        h_div(self, rhs)
    }
    #[inline]
    fn scale(self, s: f32) -> Self {
        h_scale_by_float(self, s)
    }
    #[inline]
    fn exp(self) -> Self {
        h_exp(self)
    }
    #[inline]
    fn widen(self) -> f32 {
        self.to_f32()
    }
    #[inline]
    fn narrow(x: f32) -> Self {
        f32_to_f16(x)
    }

    fn slice(data: &TensorData) -> Option<&[Self]> {
        match data {
            TensorData::F16(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    fn slice_mut(data: &mut TensorData) -> Option<&mut [Self]> {
        match data {
            TensorData::F16(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    fn wrap(values: Vec<Self>) -> TensorData {
        TensorData::F16(values)
    }
}

/// Errors unless `t` has the `expected` dtype.
pub(crate) fn check_same_dtype(layer: &str, expected: Dtype, t: &Tensor) -> Result<(), LayerError> {
    if t.dtype() != expected {
        return Err(LayerError::Dtype { layer: layer.to_string(), expected, got: t.dtype() });
    }
    Ok(())
}

pub(crate) fn typed<E: Element>(t: &Tensor) -> &[E] {
    E::slice(t.data()).expect("dtype checked by caller")
}

pub(crate) fn output<E: Element>(shape: Shape, values: Vec<E>) -> Tensor {
    Tensor::from_data(shape, E::wrap(values)).expect("kernel produced a full buffer")
}

/// Dispatches a generic kernel body on the dtype of `$t`.
macro_rules! dispatch {
    ($t:expr, $E:ident => $body:expr) => {
        match $t.dtype() {
            $crate::tensor::Dtype::F32 => {
                type $E = f32;
                $body
            }
            $crate::tensor::Dtype::F16 => {
                type $E = $crate::fp16::HalfBits;
                $body
            }
        }
    };
}
pub(crate) use dispatch;
