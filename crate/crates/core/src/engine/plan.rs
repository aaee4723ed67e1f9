use std::collections::HashMap;

use super::EngineError;
use crate::layers::{conv_output_shape, pool_output_shape, LayerError, LayerKind};
use crate::netdef::{LayerConfig, NetDef};
use crate::tensor::{Dtype, Shape};

/// Whether activation buffers may be shared between blobs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReusePolicy {
    /// Interval-based best-fit reuse plus in-place ReLU and Scale.
    #[default]
    Greedy,
    /// One buffer per blob.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobPlan {
    pub name: String,
    pub shape: Shape,
    /// Step that writes the blob.
    pub producer: usize,
    /// Last step that reads it. The network output is read by a virtual
    /// step one past the end; a blob nobody reads ends at its producer.
    pub last_use: usize,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamPlan {
    pub name: String,
    /// First layer that uses the blob.
    pub layer: String,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub name: String,
    pub kind: LayerKind,
    pub config: LayerConfig,
    pub inputs: Vec<usize>,
    pub output: usize,
    /// Indices into [`ForwardPlan::params`], in the layer's declared order.
    pub params: Vec<usize>,
    /// Output shares the input's buffer.
    pub in_place: bool,
}

/// A static schedule with every shape and buffer decided.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPlan {
    pub net_name: String,
    pub dtype: Dtype,
    pub batch: usize,
    pub reuse: ReusePolicy,
    pub steps: Vec<StepPlan>,
    pub blobs: Vec<BlobPlan>,
    /// Capacity of each buffer in elements.
    pub slots: Vec<usize>,
    pub params: Vec<ParamPlan>,
    pub input_blob: usize,
    pub output_blob: usize,
}

impl ForwardPlan {
    pub fn input_shape(&self) -> Shape {
        self.blobs[self.input_blob].shape
    }

    pub fn output_shape(&self) -> Shape {
        self.blobs[self.output_blob].shape
    }

    /// Bytes of all activation buffers.
    pub fn arena_bytes(&self) -> usize {
        self.slots.iter().sum::<usize>() * self.dtype.element_size()
    }

    /// Bytes every blob would need with no sharing at all.
    pub fn unshared_blob_bytes(&self) -> usize {
        self.blobs.iter().map(|b| b.shape.count()).sum::<usize>() * self.dtype.element_size()
    }

    pub fn param_bytes(&self) -> usize {
        self.params.iter().map(|p| p.shape.count()).sum::<usize>() * self.dtype.element_size()
    }

    /// Parameters plus activation buffers, all of which are live for the
    /// whole pass.
    pub fn planned_peak_bytes(&self) -> usize {
        self.arena_bytes() + self.param_bytes()
    }

    /// Multiply-accumulates per forward pass, counting convolutions and
    /// inner products only.
    pub fn mac_count(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| {
                let out = self.blobs[s.output].shape;
                match &s.config {
                    LayerConfig::Convolution(c) => {
                        let in_c = self.blobs[s.inputs[0]].shape.c;
                        (out.count() * in_c * c.kernel * c.kernel) as u64
                    }
                    LayerConfig::InnerProduct(_) => (out.count() * self.blobs[s.inputs[0]].shape.item_len()) as u64,
                    _ => 0,
                }
            })
            .sum()
    }
}

/// Plans with greedy buffer reuse.
pub fn plan(net: &NetDef, batch: usize, dtype: Dtype) -> Result<ForwardPlan, EngineError> {
    plan_with(net, batch, dtype, ReusePolicy::Greedy)
}

pub fn plan_with(net: &NetDef, batch: usize, dtype: Dtype, reuse: ReusePolicy) -> Result<ForwardPlan, EngineError> {
    net.validate()?;
    if batch == 0 {
        return Err(EngineError::ZeroBatch);
    }

    let mut blobs: Vec<BlobPlan> = Vec::new();
    let mut blob_index: HashMap<&str, usize> = HashMap::new();
    let mut params: Vec<ParamPlan> = Vec::new();
    let mut param_index: HashMap<&str, usize> = HashMap::new();
    let mut steps = Vec::with_capacity(net.layers.len());
    let mut input_blob = 0;

    for (i, layer) in net.layers.iter().enumerate() {
        let config = layer.config()?;
        let inputs: Vec<usize> = layer.inputs.iter().map(|name| blob_index[name.as_str()]).collect();
        for &b in &inputs {
            blobs[b].last_use = i;
        }
        let in_shapes: Vec<Shape> = inputs.iter().map(|&b| blobs[b].shape).collect();
        let (out_shape, param_shapes) = infer(&config, batch, &in_shapes)
            .map_err(|source| EngineError::Layer { layer: layer.name.clone(), source })?;
        out_shape.checked_count().map_err(|source| EngineError::Tensor { layer: layer.name.clone(), source })?;

        let mut step_params = Vec::with_capacity(param_shapes.len());
        for (name, shape) in layer.weight_names.iter().zip(param_shapes) {
            let idx = match param_index.get(name.as_str()) {
                Some(&idx) => {
                    if params[idx].shape != shape {
                        return Err(EngineError::Layer {
                            layer: layer.name.clone(),
                            source: LayerError::Shape {
                                layer: layer.name.clone(),
                                message: format!(
                                    "shared weight `{name}` is {} here but {} in layer `{}`",
                                    shape, params[idx].shape, params[idx].layer
                                ),
                            },
                        });
                    }
                    idx
                }
                None => {
                    params.push(ParamPlan { name: name.clone(), layer: layer.name.clone(), shape });
                    param_index.insert(name, params.len() - 1);
                    params.len() - 1
                }
            };
            step_params.push(idx);
        }

        let output = blobs.len();
        blobs.push(BlobPlan { name: layer.outputs[0].clone(), shape: out_shape, producer: i, last_use: i, slot: 0 });
        blob_index.insert(&layer.outputs[0], output);
        if layer.kind == LayerKind::Input {
            input_blob = output;
        }
        steps.push(StepPlan {
            name: layer.name.clone(),
            kind: layer.kind,
            config,
            inputs,
            output,
            params: step_params,
            in_place: false,
        });
    }

    let output_blob = blob_index[net.output_blob().expect("validated net has layers")];
    blobs[output_blob].last_use = steps.len();

    let slots = assign_slots(&mut steps, &mut blobs, reuse);
    Ok(ForwardPlan {
        net_name: net.name.clone(),
        dtype,
        batch,
        reuse,
        steps,
        blobs,
        slots,
        params,
        input_blob,
        output_blob,
    })
}

/// Output shape and parameter shapes for one layer.
fn infer(config: &LayerConfig, batch: usize, inputs: &[Shape]) -> Result<(Shape, Vec<Shape>), LayerError> {
    let per_channel = |c: usize| Shape::new(1, c, 1, 1);
    Ok(match config {
        LayerConfig::Input { channels, height, width } => (Shape::new(batch, *channels, *height, *width), vec![]),
        LayerConfig::Convolution(c) => {
            let mut p = vec![c.weight_shape(inputs[0].c)];
            if c.bias {
                p.push(c.bias_shape());
            }
            (conv_output_shape(inputs[0], c)?, p)
        }
        LayerConfig::Pooling(c) => (pool_output_shape(inputs[0], c)?, vec![]),
        LayerConfig::ReLU { .. } | LayerConfig::Softmax { .. } => (inputs[0], vec![]),
        LayerConfig::InnerProduct(c) => {
            let mut p = vec![c.weight_shape(inputs[0])];
            if c.bias {
                p.push(per_channel(c.num_output));
            }
            (c.output_shape(inputs[0]), p)
        }
        LayerConfig::BatchNorm(c) => {
            c.validate(inputs[0].n * inputs[0].spatial())?;
            let p = if c.use_global_stats { vec![per_channel(inputs[0].c); 2] } else { vec![] };
            (inputs[0], p)
        }
        LayerConfig::Scale(c) => {
            let p = vec![per_channel(inputs[0].c); 1 + usize::from(c.bias)];
            (inputs[0], p)
        }
        LayerConfig::Eltwise(_) => {
            if let Some(other) = inputs.iter().find(|s| **s != inputs[0]) {
                return Err(LayerError::Shape {
                    layer: "eltwise".into(),
                    message: format!("input shapes {} and {} differ", inputs[0], other),
                });
            }
            (inputs[0], vec![])
        }
    })
}

/// Assigns buffers in schedule order.
///
/// A buffer is free at step `t` once every blob placed in it has
/// `last_use < t`. The output of step `t` takes the smallest free buffer
/// that is large enough; failing that, the largest free buffer grows to
/// fit; failing that, a new buffer is opened. Ties go to the lower index.
/// A ReLU or Scale whose input has no reader after it writes in place.
fn assign_slots(steps: &mut [StepPlan], blobs: &mut [BlobPlan], reuse: ReusePolicy) -> Vec<usize> {
    let mut slots: Vec<usize> = Vec::new();
    let mut busy_until: Vec<usize> = Vec::new();

    for (t, step) in steps.iter_mut().enumerate() {
        let out = step.output;
        let need = blobs[out].shape.count();
        if reuse == ReusePolicy::None {
            blobs[out].slot = slots.len();
            slots.push(need);
            continue;
        }
        if step.kind.in_place_eligible() {
            let input = step.inputs[0];
            if blobs[input].last_use == t {
                let slot = blobs[input].slot;
                step.in_place = true;
                blobs[out].slot = slot;
                busy_until[slot] = blobs[out].last_use;
                continue;
            }
        }
        let free = || (0..slots.len()).filter(|&s| busy_until[s] < t);
        let fit = free().filter(|&s| slots[s] >= need).min_by_key(|&s| (slots[s], s));
        let slot = match fit {
            Some(s) => s,
            None => match free().max_by_key(|&s| (slots[s], std::cmp::Reverse(s))) {
                Some(s) => {
                    slots[s] = need;
                    s
                }
                None => {
                    slots.push(need);
                    busy_until.push(0);
                    slots.len() - 1
                }
            },
        };
        blobs[out].slot = slot;
        busy_until[slot] = blobs[out].last_use;
    }
    slots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdef::LayerSpec;

    fn chain() -> NetDef {
        // data -> ip1 -> relu -> ip2 -> softmax
        NetDef::new(
            "chain",
            vec![
                LayerSpec::new("data", LayerKind::Input)
                    .output("data")
                    .param("channels", 8usize)
                    .param("height", 1usize)
                    .param("width", 1usize),
                LayerSpec::new("ip1", LayerKind::InnerProduct)
                    .input("data")
                    .output("ip1")
                    .param("num_output", 16usize)
                    .weight("ip1.w")
                    .weight("ip1.b"),
                LayerSpec::new("relu", LayerKind::ReLU).input("ip1").output("relu"),
                LayerSpec::new("ip2", LayerKind::InnerProduct)
                    .input("relu")
                    .output("ip2")
                    .param("num_output", 4usize)
                    .param("bias_term", 0usize)
                    .weight("ip2.w"),
                LayerSpec::new("prob", LayerKind::Softmax).input("ip2").output("prob"),
            ],
        )
    }

    #[test]
    fn shapes_and_params() {
        let p = plan(&chain(), 3, Dtype::F32).unwrap();
        assert_eq!(p.input_shape(), Shape::new(3, 8, 1, 1));
        assert_eq!(p.output_shape(), Shape::new(3, 4, 1, 1));
        let shapes: Vec<Shape> = p.params.iter().map(|q| q.shape).collect();
        assert_eq!(shapes, vec![Shape::new(16, 8, 1, 1), Shape::new(1, 16, 1, 1), Shape::new(4, 16, 1, 1)]);
        assert_eq!(p.mac_count(), 3 * (16 * 8 + 4 * 16));
    }

    #[test]
    fn relu_runs_in_place() {
        let p = plan(&chain(), 1, Dtype::F32).unwrap();
        assert!(p.steps[2].in_place);
        assert_eq!(p.blobs[1].slot, p.blobs[2].slot);
        let none = plan_with(&chain(), 1, Dtype::F32, ReusePolicy::None).unwrap();
        assert!(none.steps.iter().all(|s| !s.in_place));
        assert_eq!(none.slots.len(), none.blobs.len());
    }

    #[test]
    fn reuse_beats_no_reuse() {
        let greedy = plan(&chain(), 2, Dtype::F16).unwrap();
        let none = plan_with(&chain(), 2, Dtype::F16, ReusePolicy::None).unwrap();
        assert!(greedy.planned_peak_bytes() < none.planned_peak_bytes());
        assert_eq!(none.arena_bytes(), none.unshared_blob_bytes());
    }

    #[test]
    fn live_blobs_never_share() {
        let p = plan(&chain(), 2, Dtype::F32).unwrap();
        for a in &p.blobs {
            for b in &p.blobs {
                if a.name != b.name && a.slot == b.slot {
                    let disjoint = a.last_use <= b.producer || b.last_use <= a.producer;
                    assert!(disjoint, "{} and {} overlap", a.name, b.name);
                }
            }
        }
    }

    #[test]
    fn zero_batch_rejected() {
        assert!(matches!(plan(&chain(), 0, Dtype::F32), Err(EngineError::ZeroBatch)));
    }
}
