use super::{check_same_dtype, dispatch, dot, output, typed, AccumPolicy, Element, LayerError};
use crate::tensor::{Shape, Tensor};

const NAME: &str = "inner_product";

#[derive(Clone, Debug, PartialEq)]
pub struct InnerProductConfig {
    pub num_output: usize,
    pub bias: bool,
    pub accum: AccumPolicy,
}

impl InnerProductConfig {
    pub fn new(num_output: usize) -> Self {
        InnerProductConfig { num_output, bias: true, accum: AccumPolicy::default() }
    }

    pub fn weight_shape(&self, input: Shape) -> Shape {
        Shape::new(self.num_output, input.item_len(), 1, 1)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(input.n, self.num_output, 1, 1)
    }
}

/// `y[n, o] = sum_k w[o, k] * x[n, k] + b[o]`, where `x` is each item
/// flattened over C·H·W.
pub fn inner_product_into<E: Element>(
    input: &[E],
    in_shape: Shape,
    weights: &[E],
    bias: Option<&[E]>,
    cfg: &InnerProductConfig,
    out: &mut [E],
) {
    let k = in_shape.item_len();
    debug_assert_eq!(weights.len(), cfg.num_output * k);
    for n in 0..in_shape.n {
        let x = &input[n * k..(n + 1) * k];
        let y = &mut out[n * cfg.num_output..(n + 1) * cfg.num_output];
        for (o, y_val) in y.iter_mut().enumerate() {
            let mut acc = dot(cfg.accum, &weights[o * k..(o + 1) * k], x);
            if let Some(b) = bias {
                acc = acc.add(b[o]);
            }
            *y_val = acc;
        }
    }
}

pub fn inner_product_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    cfg: &InnerProductConfig,
) -> Result<Tensor, LayerError> {
    let in_shape = input.shape();
    if cfg.num_output == 0 {
        return Err(LayerError::config(NAME, "num_output must be positive"));
    }
    check_same_dtype(NAME, input.dtype(), weights)?;
    if weights.shape() != cfg.weight_shape(in_shape) {
        return Err(LayerError::shape(
            NAME,
            format!("weights {} need inner dim {} to match input {}", weights.shape(), in_shape.item_len(), in_shape),
        ));
    }
    if let Some(b) = bias {
        check_same_dtype(NAME, input.dtype(), b)?;
        if b.len() != cfg.num_output {
            return Err(LayerError::shape(
                NAME,
                format!("bias {} does not match {} outputs", b.shape(), cfg.num_output),
            ));
        }
    }
    let out_shape = cfg.output_shape(in_shape);
    Ok(dispatch!(input, E => {
        let mut out = vec![<E as Element>::ZERO; out_shape.count()];
        inner_product_into::<E>(typed(input), in_shape, typed(weights), bias.map(typed::<E>), cfg, &mut out);
        output(out_shape, out)
    }))
}
