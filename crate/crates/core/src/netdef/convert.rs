use std::collections::BTreeMap;

use serde::Serialize;

use super::{WeightFile, WeightFileError};
use crate::fp16::{f32_to_f16, f32_to_f16_saturating, HalfBits};
use crate::tensor::{Dtype, Tensor, TensorData};

/// What happened during an F32 to F16 weight conversion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConversionReport {
    pub blobs_converted: usize,
    pub elements: usize,
    /// Finite values beyond the half range, clamped to ±65504.
    pub saturated: usize,
    /// Nonzero finite values that became ±0.
    pub flushed_to_zero: usize,
}

impl ConversionReport {
    fn record(&mut self, x: f32, h: HalfBits) {
        self.elements += 1;
        if x.is_finite() && f32_to_f16(x).is_infinite() {
            self.saturated += 1;
        }
        if x.is_finite() && x != 0.0 && h.is_zero() {
            self.flushed_to_zero += 1;
        }
    }
}

/// Rounds an f32 tensor to half, clamping overflow instead of producing
/// infinities. Half tensors are returned unchanged.
pub fn saturate_to_f16(t: &Tensor, report: &mut ConversionReport) -> Tensor {
    let values = match t.data() {
        TensorData::F32(v) => v,
        TensorData::F16(_) => return t.clone(),
    };
    let halves = values
        .iter()
        .map(|&x| {
            let h = f32_to_f16_saturating(x);
            report.record(x, h);
            h
        })
        .collect();
    report.blobs_converted += 1;
    Tensor::from_f16(t.shape(), halves).expect("shape unchanged")
}

/// Converts every blob of an f32 weight file to f16.
pub fn convert_weights(src: &WeightFile) -> Result<(WeightFile, ConversionReport), WeightFileError> {
    if src.dtype() == Dtype::F16 && !src.blobs().is_empty() {
        return Err(WeightFileError::AlreadyF16);
    }
    let mut report = ConversionReport::default();
    let blobs: BTreeMap<String, Tensor> =
        src.blobs().iter().map(|(name, t)| (name.clone(), saturate_to_f16(t, &mut report))).collect();
    Ok((WeightFile::new(Dtype::F16, blobs)?, report))
}
