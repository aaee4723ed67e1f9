use serde::{Deserialize, Serialize};

use super::conv::out_extent;
use super::{accumulate, dispatch, output, typed, AccumPolicy, Element, LayerError};
use crate::tensor::{Shape, Tensor};

const NAME: &str = "pooling";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolConfig {
    pub mode: PoolMode,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub accum: AccumPolicy,
}

impl PoolConfig {
    pub fn new(mode: PoolMode, kernel: usize, stride: usize) -> Self {
        PoolConfig { mode, kernel, stride, pad: 0, accum: AccumPolicy::default() }
    }
}

/// Floor-mode output shape, same formula as convolution.
pub fn pool_output_shape(input: Shape, cfg: &PoolConfig) -> Result<Shape, LayerError> {
    if cfg.pad >= cfg.kernel && cfg.kernel > 0 {
        return Err(LayerError::config(NAME, "pad must be smaller than the kernel"));
    }
    let oh = out_extent(input.h, cfg.kernel, cfg.stride, cfg.pad);
    let ow = out_extent(input.w, cfg.kernel, cfg.stride, cfg.pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape::new(input.n, input.c, oh, ow)),
        _ => Err(LayerError::shape(
            NAME,
            format!("kernel {} stride {} pad {} does not fit input {}", cfg.kernel, cfg.stride, cfg.pad, input),
        )),
    }
}

/// Max pooling compares only, so it is exact in either dtype. Average
/// pooling sums the in-bounds window under `accum` and multiplies by the
/// single-precision reciprocal of the window size, where the window is
/// clipped to the padded extent but still counts padding cells.
pub fn pool_into<E: Element>(input: &[E], in_shape: Shape, cfg: &PoolConfig, out: &mut [E]) {
    let out_shape = pool_output_shape(in_shape, cfg).expect("shape validated by caller");
    let (k, stride, pad) = (cfg.kernel as isize, cfg.stride as isize, cfg.pad as isize);
    let (h, w) = (in_shape.h as isize, in_shape.w as isize);
    let planes = in_shape.n * in_shape.c;
    let mut window: Vec<E> = Vec::with_capacity(cfg.kernel * cfg.kernel);

    for plane in 0..planes {
        let x = &input[plane * in_shape.spatial()..(plane + 1) * in_shape.spatial()];
        let y = &mut out[plane * out_shape.spatial()..(plane + 1) * out_shape.spatial()];
        for oy in 0..out_shape.h as isize {
            for ox in 0..out_shape.w as isize {
                let mut hs = oy * stride - pad;
                let mut ws = ox * stride - pad;
                let he = (hs + k).min(h + pad);
                let we = (ws + k).min(w + pad);
                let pool_size = ((he - hs) * (we - ws)) as f32;
                hs = hs.max(0);
                ws = ws.max(0);
                let (he, we) = (he.min(h), we.min(w));

                window.clear();
                for iy in hs..he {
                    for ix in ws..we {
                        window.push(x[(iy * w + ix) as usize]);
                    }
                }
                let v = match cfg.mode {
                    PoolMode::Max => window.iter().copied().reduce(Element::max).unwrap_or(E::ZERO),
                    PoolMode::Avg => accumulate(cfg.accum, window.len(), |i| window[i]).scale(1.0 / pool_size),
                };
                y[(oy * out_shape.w as isize + ox) as usize] = v;
            }
        }
    }
}

pub fn pool_forward(input: &Tensor, cfg: &PoolConfig) -> Result<Tensor, LayerError> {
    let out_shape = pool_output_shape(input.shape(), cfg)?;
    Ok(dispatch!(input, E => {
        let mut out = vec![<E as Element>::ZERO; out_shape.count()];
        pool_into::<E>(typed(input), input.shape(), cfg, &mut out);
        output(out_shape, out)
    }))
}
