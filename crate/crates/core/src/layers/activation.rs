use super::{accumulate, dispatch, output, typed, AccumPolicy, Element, LayerError};
use crate::tensor::{Shape, Tensor};

#[inline]
fn relu_one<E: Element>(x: E, negative_slope: f32) -> E {
    if x.widen() > 0.0 {
        x
    } else if negative_slope == 0.0 {
        E::ZERO
    } else {
        x.scale(negative_slope)
    }
}

pub fn relu_into<E: Element>(input: &[E], negative_slope: f32, out: &mut [E]) {
    for (y, &x) in out.iter_mut().zip(input) {
        *y = relu_one(x, negative_slope);
    }
}

pub fn relu_in_place<E: Element>(data: &mut [E], negative_slope: f32) {
    for x in data.iter_mut() {
        *x = relu_one(*x, negative_slope);
    }
}

pub fn relu_forward(input: &Tensor, negative_slope: f32) -> Result<Tensor, LayerError> {
    Ok(dispatch!(input, E => {
        let mut out = typed::<E>(input).to_vec();
        relu_in_place(&mut out, negative_slope);
        output(input.shape(), out)
    }))
}

/// Softmax of one contiguous row.
///
/// With `subtract_max` the row maximum is removed before exponentiation.
/// Half precision needs it: exp(12) is already past 65504. The flag exists
/// so tests can show the unstabilized failure; the layer always sets it.
pub fn softmax_slice<E: Element>(input: &[E], out: &mut [E], subtract_max: bool, accum: AccumPolicy) {
    debug_assert_eq!(input.len(), out.len());
    if input.is_empty() {
        return;
    }
    let shift = if subtract_max { input.iter().copied().reduce(Element::max).expect("non-empty") } else { E::ZERO };
    for (y, &x) in out.iter_mut().zip(input) {
        *y = x.sub(shift).exp();
    }
    let total = accumulate(accum, out.len(), |i| out[i]);
    for y in out.iter_mut() {
        *y = y.div(total);
    }
}

/// Softmax over the channel axis at every (n, h, w) position.
pub fn softmax_into<E: Element>(input: &[E], shape: Shape, accum: AccumPolicy, out: &mut [E]) {
    let spatial = shape.spatial();
    if spatial == 1 {
        for (x, y) in input.chunks_exact(shape.c).zip(out.chunks_exact_mut(shape.c)) {
            softmax_slice(x, y, true, accum);
        }
        return;
    }
    let mut row_in = vec![E::ZERO; shape.c];
    let mut row_out = vec![E::ZERO; shape.c];
    for n in 0..shape.n {
        let base = n * shape.item_len();
        for p in 0..spatial {
            for c in 0..shape.c {
                row_in[c] = input[base + c * spatial + p];
            }
            softmax_slice(&row_in, &mut row_out, true, accum);
            for c in 0..shape.c {
                out[base + c * spatial + p] = row_out[c];
            }
        }
    }
}

pub fn softmax_forward(input: &Tensor, accum: AccumPolicy) -> Result<Tensor, LayerError> {
    Ok(dispatch!(input, E => {
        let mut out = vec![<E as Element>::ZERO; input.len()];
        softmax_into::<E>(typed(input), input.shape(), accum, &mut out);
        output(input.shape(), out)
    }))
}
