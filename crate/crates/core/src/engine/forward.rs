use std::borrow::Cow;
use std::collections::BTreeMap;

use super::{EngineError, ForwardPlan, MemoryMeter, StepPlan};
use crate::fp16::HalfBits;
use crate::layers::{
    batchnorm_into, conv_into, eltwise_into, inner_product_into, pool_into, relu_in_place, relu_into, scale_in_place,
    softmax_into, Element,
};
use crate::netdef::{saturate_to_f16, ConversionReport, LayerConfig};
use crate::tensor::{Dtype, Shape, Tensor};

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Tensor,
    pub meter: MemoryMeter,
}

/// Runs one forward pass.
///
/// Weights whose dtype differs from the plan's are converted once per call,
/// saturating on overflow like the weight converter. An input of the other
/// dtype is converted while it is copied into its buffer. Both conversions
/// are counted on the returned meter. All buffers and parameters are
/// reserved before the first layer runs and released after the last.
pub fn forward(
    plan: &ForwardPlan,
    weights: &BTreeMap<String, Tensor>,
    input: &Tensor,
) -> Result<ForwardOutput, EngineError> {
    if input.shape() != plan.input_shape() {
        return Err(EngineError::InputShape { expected: plan.input_shape(), got: input.shape() });
    }
    let mut meter = MemoryMeter::new();
    let mut report = ConversionReport::default();
    let mut params: Vec<Cow<'_, Tensor>> = Vec::with_capacity(plan.params.len());
    for p in &plan.params {
        let t = weights
            .get(&p.name)
            .ok_or_else(|| EngineError::MissingWeight { layer: p.layer.clone(), blob: p.name.clone() })?;
        if t.shape() != p.shape {
            return Err(EngineError::WeightShape {
                layer: p.layer.clone(),
                blob: p.name.clone(),
                expected: p.shape,
                got: t.shape(),
            });
        }
        let resolved = if t.dtype() == plan.dtype {
            Cow::Borrowed(t)
        } else {
            meter.record_conversions(t.len() as u64);
            Cow::Owned(match plan.dtype {
                Dtype::F16 => saturate_to_f16(t, &mut report),
                Dtype::F32 => Tensor::from_f32(t.shape(), t.to_f32_vec()).expect("same shape"),
            })
        };
        meter.alloc(resolved.byte_size());
        params.push(resolved);
    }

    let output = match plan.dtype {
        Dtype::F32 => execute::<f32>(plan, &params, input, &mut meter)?,
        Dtype::F16 => execute::<HalfBits>(plan, &params, input, &mut meter)?,
    };
    meter.free(params.iter().map(|t| t.byte_size()).sum());
    Ok(ForwardOutput { output, meter })
}

fn execute<E: Element>(
    plan: &ForwardPlan,
    params: &[Cow<'_, Tensor>],
    input: &Tensor,
    meter: &mut MemoryMeter,
) -> Result<Tensor, EngineError> {
    let size = E::DTYPE.element_size();
    let params: Vec<&[E]> = params.iter().map(|t| E::slice(t.data()).expect("resolved to plan dtype")).collect();
    let mut slots: Vec<Vec<E>> = plan
        .slots
        .iter()
        .map(|&n| {
            meter.alloc(n * size);
            vec![E::ZERO; n]
        })
        .collect();

    for step in &plan.steps {
        let out_blob = &plan.blobs[step.output];
        let len = out_blob.shape.count();
        let shape = out_blob.shape;
        let param = |k: usize| params[step.params[k]];
        let opt_param = |k: usize| step.params.get(k).map(|&p| params[p]);

        if step.in_place {
            let data = &mut slots[out_blob.slot][..len];
            match &step.config {
                LayerConfig::ReLU { negative_slope } => relu_in_place(data, *negative_slope),
                LayerConfig::Scale(_) => scale_in_place(data, shape, param(0), opt_param(1)),
                other => unreachable!("{other:?} is not in-place eligible"),
            }
            continue;
        }

        let mut out = std::mem::take(&mut slots[out_blob.slot]);
        let inputs: Vec<(&[E], Shape)> = step
            .inputs
            .iter()
            .map(|&b| {
                let b = &plan.blobs[b];
                debug_assert_ne!(b.slot, out_blob.slot, "planner aliased a live input");
                (&slots[b.slot][..b.shape.count()], b.shape)
            })
            .collect();
        let step_params: Vec<&[E]> = step.params.iter().map(|&p| params[p]).collect();
        let result = run_step(step, &inputs, &step_params, input, meter, &mut out[..len]);
        drop(inputs);
        slots[out_blob.slot] = out;
        result?;
    }

    let total: usize = slots.iter().map(|s| s.len() * size).sum();
    let out_blob = &plan.blobs[plan.output_blob];
    let mut values = std::mem::take(&mut slots[out_blob.slot]);
    values.truncate(out_blob.shape.count());
    values.shrink_to_fit();
    drop(slots);
    meter.free(total);
    Ok(Tensor::from_data(out_blob.shape, E::wrap(values)).expect("planned shape"))
}

fn run_step<E: Element>(
    step: &StepPlan,
    inputs: &[(&[E], Shape)],
    params: &[&[E]],
    input: &Tensor,
    meter: &mut MemoryMeter,
    out: &mut [E],
) -> Result<(), EngineError> {
    let input_of = |k: usize| inputs[k];
    let param = |k: usize| params[k];
    let opt_param = |k: usize| params.get(k).copied();
    match &step.config {
        LayerConfig::Input { .. } => match E::slice(input.data()) {
            Some(x) => out.copy_from_slice(x),
            None => {
                meter.record_conversions(input.len() as u64);
                for (y, x) in out.iter_mut().zip(input.to_f32_vec()) {
                    *y = E::narrow(x);
                }
            }
        },
        LayerConfig::Convolution(c) => {
            let (x, s) = input_of(0);
            conv_into(x, s, param(0), opt_param(1), c, out);
        }
        LayerConfig::Pooling(c) => {
            let (x, s) = input_of(0);
            pool_into(x, s, c, out);
        }
        LayerConfig::ReLU { negative_slope } => relu_into(input_of(0).0, *negative_slope, out),
        LayerConfig::InnerProduct(c) => {
            let (x, s) = input_of(0);
            inner_product_into(x, s, param(0), opt_param(1), c, out);
        }
        LayerConfig::BatchNorm(c) => {
            let (x, s) = input_of(0);
            let stats = c.use_global_stats.then(|| (param(0), param(1)));
            batchnorm_into(x, s, c, stats, out)
                .map_err(|source| EngineError::Layer { layer: step.name.clone(), source })?;
        }
        LayerConfig::Scale(_) => {
            let (x, s) = input_of(0);
            out.copy_from_slice(x);
            scale_in_place(out, s, param(0), opt_param(1));
        }
        LayerConfig::Eltwise(c) => {
            let xs: Vec<&[E]> = inputs.iter().map(|&(x, _)| x).collect();
            eltwise_into(&xs, c, out);
        }
        LayerConfig::Softmax { accum } => {
            let (x, s) = input_of(0);
            softmax_into(x, s, *accum, out);
        }
    }
    Ok(())
}
