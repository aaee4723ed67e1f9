//! Forward-only CNN inference in single precision and in a bit-exact
//! software binary16 model.
//!
//! The crate is organised bottom-up:
//!
//! - [`fp16`]: the half-precision number format and its correctly rounded
//!   arithmetic.
//! - [`tensor`]: NCHW tensors in either dtype.
//! - [`layers`]: layer kernels, generic over the element type.
//! - [`netdef`]: network documents, weight files and the weight converter.
//! - [`engine`]: planning and running a forward pass with buffer reuse.
//! - [`tools`]: model generation, single runs and the benchmark sweep.

pub mod engine;
pub mod fp16;
pub mod layers;
pub mod netdef;
pub mod tensor;
pub mod tools;

pub use engine::{forward, measure, plan, plan_with, EngineError, ForwardPlan, MemoryMeter, ReusePolicy};
pub use fp16::HalfBits;
pub use layers::{AccumPolicy, LayerKind};
pub use netdef::{parse_netdef, ConversionReport, NetDef, WeightFile};
pub use tensor::{Dtype, Shape, Tensor, TensorData};
