use super::{check_same_dtype, dispatch, dot, output, typed, AccumPolicy, Element, LayerError};
use crate::tensor::{Shape, Tensor};

const NAME: &str = "convolution";

/// Square-kernel 2-D cross-correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvConfig {
    pub num_output: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub accum: AccumPolicy,
}

impl ConvConfig {
    pub fn new(num_output: usize, kernel: usize) -> Self {
        ConvConfig { num_output, kernel, stride: 1, pad: 0, bias: true, accum: AccumPolicy::default() }
    }

    pub fn weight_shape(&self, in_channels: usize) -> Shape {
        Shape::new(self.num_output, in_channels, self.kernel, self.kernel)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.num_output, 1, 1)
    }
}

/// Output extent along one axis: `(len + 2 pad - kernel) / stride + 1`.
pub(crate) fn out_extent(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || len + 2 * pad < kernel {
        return None;
    }
    Some((len + 2 * pad - kernel) / stride + 1)
}

pub fn conv_output_shape(input: Shape, cfg: &ConvConfig) -> Result<Shape, LayerError> {
    if cfg.num_output == 0 {
        return Err(LayerError::config(NAME, "num_output must be positive"));
    }
    let oh = out_extent(input.h, cfg.kernel, cfg.stride, cfg.pad);
    let ow = out_extent(input.w, cfg.kernel, cfg.stride, cfg.pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape::new(input.n, cfg.num_output, oh, ow)),
        _ => Err(LayerError::shape(
            NAME,
            format!("kernel {} stride {} pad {} does not fit input {}", cfg.kernel, cfg.stride, cfg.pad, input),
        )),
    }
}

/// Convolution through im2col: each output position's receptive field is
/// unrolled into a contiguous row, then every output is one rounded dot
/// product against a filter row, followed by the bias add.
///
/// `out` must hold exactly the output shape's element count.
pub fn conv_into<E: Element>(
    input: &[E],
    in_shape: Shape,
    weights: &[E],
    bias: Option<&[E]>,
    cfg: &ConvConfig,
    out: &mut [E],
) {
    let out_shape = conv_output_shape(in_shape, cfg).expect("shape validated by caller");
    let (k, stride, pad) = (cfg.kernel, cfg.stride, cfg.pad);
    let patch = in_shape.c * k * k;
    let positions = out_shape.spatial();
    debug_assert_eq!(weights.len(), cfg.num_output * patch);
    debug_assert_eq!(out.len(), out_shape.count());

    let mut cols = vec![E::ZERO; positions * patch];
    for n in 0..in_shape.n {
        let x = &input[n * in_shape.item_len()..(n + 1) * in_shape.item_len()];
        im2col(x, in_shape, k, stride, pad, out_shape.h, out_shape.w, &mut cols);

        let y = &mut out[n * out_shape.item_len()..(n + 1) * out_shape.item_len()];
        for oc in 0..cfg.num_output {
            let filter = &weights[oc * patch..(oc + 1) * patch];
            let y_plane = &mut y[oc * positions..(oc + 1) * positions];
            for (p, y_val) in y_plane.iter_mut().enumerate() {
                let mut acc = dot(cfg.accum, filter, &cols[p * patch..(p + 1) * patch]);
                if let Some(b) = bias {
                    acc = acc.add(b[oc]);
                }
                *y_val = acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(x: &[E], s: Shape, k: usize, stride: usize, pad: usize, oh: usize, ow: usize, cols: &mut [E]) {
    let patch = s.c * k * k;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            let mut idx = 0;
            for c in 0..s.c {
                let plane = &x[c * s.spatial()..(c + 1) * s.spatial()];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        row[idx] = if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                            plane[iy as usize * s.w + ix as usize]
                        } else {
                            E::ZERO
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Tensor-level convolution. Weights are `(num_output, C, k, k)`, bias
/// `(1, num_output, 1, 1)`.
pub fn conv_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    cfg: &ConvConfig,
) -> Result<Tensor, LayerError> {
    let in_shape = input.shape();
    let out_shape = conv_output_shape(in_shape, cfg)?;
    check_same_dtype(NAME, input.dtype(), weights)?;
    if weights.shape() != cfg.weight_shape(in_shape.c) {
        return Err(LayerError::shape(
            NAME,
            format!("weights {} do not match expected {}", weights.shape(), cfg.weight_shape(in_shape.c)),
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
    Ok(dispatch!(input, E => {
        let mut out = vec![<E as Element>::ZERO; out_shape.count()];
        conv_into::<E>(typed(input), in_shape, typed(weights), bias.map(typed::<E>), cfg, &mut out);
        output(out_shape, out)
    }))
}
