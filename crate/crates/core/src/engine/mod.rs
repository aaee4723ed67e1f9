//! Forward-pass planning and execution.
//!
//! [`plan`] turns a validated [`NetDef`](crate::netdef::NetDef) into a
//! [`ForwardPlan`]: shapes for every blob, a static schedule and an
//! assignment of blobs to reusable buffers. [`forward`] runs a plan;
//! [`measure`] times repeated runs.

mod forward;
mod measure;
mod meter;
mod plan;

pub use forward::{forward, ForwardOutput};
pub use measure::{measure, Measurement};
pub use meter::MemoryMeter;
pub use plan::{plan, plan_with, BlobPlan, ForwardPlan, ParamPlan, ReusePolicy, StepPlan};

use thiserror::Error;

use crate::layers::LayerError;
use crate::netdef::NetDefError;
use crate::tensor::{Dtype, Shape, TensorError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    NetDef(#[from] NetDefError),
    #[error("in layer `{layer}`: {source}")]
    Layer { layer: String, source: LayerError },
    #[error("in layer `{layer}`: {source}")]
    Tensor { layer: String, source: TensorError },
    #[error("layer `{layer}` needs weight blob `{blob}`, which was not supplied")]
    MissingWeight { layer: String, blob: String },
    #[error("weight blob `{blob}` for layer `{layer}` has shape {got}, expected {expected}")]
    WeightShape { layer: String, blob: String, expected: Shape, got: Shape },
    #[error("input has shape {got}, expected {expected}")]
    InputShape { expected: Shape, got: Shape },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("iteration count must be positive")]
    ZeroIters,
    #[error("run {iteration} produced output that differs from run 0 in dtype {dtype}")]
    Nondeterministic { iteration: usize, dtype: Dtype },
}
