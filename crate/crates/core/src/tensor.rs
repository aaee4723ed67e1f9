//! Dense NCHW tensors tagged with an element dtype.

use std::fmt;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::MemoryMeter;
use crate::fp16::{f32_to_f16, HalfBits};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor shape {0} has a zero dimension")]
    ZeroDim(Shape),
    #[error("tensor shape {0} overflows the addressable size")]
    Overflow(Shape),
    #[error("buffer of {got} elements does not match shape {shape}")]
    LengthMismatch { shape: Shape, got: usize },
    #[error("random fill range is empty: lo {lo} must be below hi {hi}")]
    EmptyRange { lo: f32, hi: f32 },
}

/// Element type of a tensor. Double precision is deliberately absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub const fn element_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F16 => "f16",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float" | "fp32" => Ok(Dtype::F32),
            "f16" | "half" | "fp16" => Ok(Dtype::F16),
            other => Err(format!("unknown dtype `{other}` (expected f32 or f16)")),
        }
    }
}

/// A rank-4 NCHW shape. Vectors and matrices are embedded as `(N, C, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element count, rejecting zero dims and overflow.
    pub fn checked_count(&self) -> Result<usize, TensorError> {
        if self.dims().contains(&0) {
            return Err(TensorError::ZeroDim(*self));
        }
        self.dims().iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(TensorError::Overflow(*self))
    }

    /// Element count. Only meaningful for shapes that passed validation.
    pub const fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn spatial(&self) -> usize {
        self.h * self.w
    }

    pub fn with_batch(&self, n: usize) -> Shape {
        Shape { n, ..*self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Raw element storage. Half tensors keep 16-bit patterns, never widened
/// shadow copies.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<HalfBits>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F16(_) => Dtype::F16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: TensorData,
}

impl Tensor {
    /// Zero-filled tensor.
    pub fn zeros(shape: Shape, dtype: Dtype) -> Result<Tensor, TensorError> {
        let count = shape.checked_count()?;
        count.checked_mul(dtype.element_size()).ok_or(TensorError::Overflow(shape))?;
        let data = match dtype {
            Dtype::F32 => TensorData::F32(vec![0.0; count]),
            Dtype::F16 => TensorData::F16(vec![HalfBits::ZERO; count]),
        };
        Ok(Tensor { shape, data })
    }

    /// Zero-filled tensor whose bytes are reported to `meter`.
    pub fn alloc(shape: Shape, dtype: Dtype, meter: &mut MemoryMeter) -> Result<Tensor, TensorError> {
        let t = Tensor::zeros(shape, dtype)?;
        meter.alloc(t.byte_size());
        Ok(t)
    }

    pub fn from_data(shape: Shape, data: TensorData) -> Result<Tensor, TensorError> {
        let count = shape.checked_count()?;
        if data.len() != count {
            return Err(TensorError::LengthMismatch { shape, got: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Shape, values: Vec<f32>) -> Result<Tensor, TensorError> {
        Tensor::from_data(shape, TensorData::F32(values))
    }

    pub fn from_f16(shape: Shape, values: Vec<HalfBits>) -> Result<Tensor, TensorError> {
        Tensor::from_data(shape, TensorData::F16(values))
    }

    /// Deterministic uniform tensor, see [`Tensor::fill_random`].
    pub fn random(shape: Shape, dtype: Dtype, seed: u64, lo: f32, hi: f32) -> Result<Tensor, TensorError> {
        let mut t = Tensor::zeros(shape, dtype)?;
        t.fill_random(seed, lo, hi)?;
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut TensorData {
        &mut self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn byte_size(&self) -> usize {
        self.len() * self.dtype().element_size()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::F16(_) => None,
        }
    }

    pub fn as_f16(&self) -> Option<&[HalfBits]> {
        match &self.data {
            TensorData::F16(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// Every element widened to single precision (exact for both dtypes).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F16(v) => v.iter().map(|h| h.to_f32()).collect(),
        }
    }

    /// Bitwise equality, so NaNs with equal patterns compare equal.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (TensorData::F16(a), TensorData::F16(b)) => a == b,
            _ => false,
        }
    }

    /// Elementwise dtype conversion. Crossing dtypes adds the element count
    /// to `meter`'s conversion counter; a same-dtype call is a plain copy.
    pub fn convert(&self, target: Dtype, meter: &mut MemoryMeter) -> Tensor {
        let data = match (&self.data, target) {
            (TensorData::F32(v), Dtype::F16) => {
                meter.record_conversions(v.len() as u64);
                TensorData::F16(v.iter().map(|&x| f32_to_f16(x)).collect())
            }
            (TensorData::F16(v), Dtype::F32) => {
                meter.record_conversions(v.len() as u64);
                TensorData::F32(v.iter().map(|h| h.to_f32()).collect())
            }
            (data, _) => data.clone(),
        };
        Tensor { shape: self.shape, data }
    }

    /// Fills with uniform values in `[lo, hi)`.
    ///
    /// The generator is ChaCha8 seeded with `seed` through
    /// `SeedableRng::seed_from_u64`. Each element takes one `next_u32` draw:
    /// `u = (draw >> 8) * 2^-24`, `x = lo + (hi - lo) * u` evaluated in
    /// double and rounded to single. Half tensors round that single to the
    /// nearest half and nudge it back inside `[lo, hi)` when rounding
    /// crosses an endpoint. This recipe is fixed; changing it changes every
    /// generated model and benchmark input.
    pub fn fill_random(&mut self, seed: u64, lo: f32, hi: f32) -> Result<(), TensorError> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(TensorError::EmptyRange { lo, hi });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = move || {
            let u = (rng.next_u32() >> 8) as f64 * (1.0 / (1u64 << 24) as f64);
            let x = (lo as f64 + (hi as f64 - lo as f64) * u) as f32;
            if x >= hi {
                hi.next_down()
            } else {
                x.max(lo)
            }
        };
        match &mut self.data {
            TensorData::F32(v) => v.iter_mut().for_each(|x| *x = draw()),
            TensorData::F16(v) => {
                for slot in v.iter_mut() {
                    let mut h = f32_to_f16(draw());
                    while h.to_f32() >= hi {
                        h = h.next_down();
                    }
                    while h.to_f32() < lo {
                        h = h.next_up();
                    }
                    *slot = h;
                }
            }
        }
        Ok(())
    }
}
