use super::{check_same_dtype, dispatch, output, typed, Element, LayerError};
use crate::tensor::{Shape, Tensor};

/// Elementwise sum with optional per-input single-precision coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EltwiseConfig {
    /// Empty means every coefficient is 1.
    pub coeffs: Vec<f32>,
}

impl EltwiseConfig {
    pub fn coeff(&self, input: usize) -> f32 {
        self.coeffs.get(input).copied().unwrap_or(1.0)
    }
}

/// Per-channel affine `x * gamma[c] + beta[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleConfig {
    pub bias: bool,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig { bias: true }
    }
}

/// Sums inputs left to right. Coefficients other than 1 go through the
/// float-scalar path.
pub fn eltwise_into<E: Element>(inputs: &[&[E]], cfg: &EltwiseConfig, out: &mut [E]) {
    let term = |k: usize, i: usize| {
        let c = cfg.coeff(k);
        if c == 1.0 {
            inputs[k][i]
        } else {
            inputs[k][i].scale(c)
        }
    };
    for (i, y) in out.iter_mut().enumerate() {
        let mut acc = term(0, i);
        for k in 1..inputs.len() {
            acc = acc.add(term(k, i));
        }
        *y = acc;
    }
}

pub fn eltwise_forward(inputs: &[&Tensor], cfg: &EltwiseConfig) -> Result<Tensor, LayerError> {
    const NAME: &str = "eltwise";
    let first = inputs.first().ok_or_else(|| LayerError::shape(NAME, "needs at least one input"))?;
    for t in &inputs[1..] {
        check_same_dtype(NAME, first.dtype(), t)?;
        if t.shape() != first.shape() {
            return Err(LayerError::shape(NAME, format!("input {} differs from {}", t.shape(), first.shape())));
        }
    }
    Ok(dispatch!(first, E => {
        let slices: Vec<&[E]> = inputs.iter().map(|t| typed::<E>(t)).collect();
        let mut out = vec![<E as Element>::ZERO; first.len()];
        eltwise_into(&slices, cfg, &mut out);
        output(first.shape(), out)
    }))
}

pub fn scale_in_place<E: Element>(data: &mut [E], shape: Shape, gamma: &[E], beta: Option<&[E]>) {
    let spatial = shape.spatial();
    for (plane, chunk) in data.chunks_exact_mut(spatial).enumerate() {
        let c = plane % shape.c;
        for x in chunk.iter_mut() {
            let mut v = x.mul(gamma[c]);
            if let Some(b) = beta {
                v = v.add(b[c]);
            }
            *x = v;
        }
    }
}

pub fn scale_forward(input: &Tensor, gamma: &Tensor, beta: Option<&Tensor>) -> Result<Tensor, LayerError> {
    const NAME: &str = "scale";
    let c = input.shape().c;
    for t in std::iter::once(gamma).chain(beta) {
        check_same_dtype(NAME, input.dtype(), t)?;
        if t.len() != c {
            return Err(LayerError::shape(NAME, format!("parameter {} does not match {c} channels", t.shape())));
        }
    }
    Ok(dispatch!(input, E => {
        let mut out = typed::<E>(input).to_vec();
        scale_in_place(&mut out, input.shape(), typed(gamma), beta.map(typed::<E>));
        output(input.shape(), out)
    }))
}
