//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the crate's arithmetic: half values are decoded
//! from their bit fields and rounding is done with f64 arithmetic, and the
//! reference network interpreter evaluates every layer directly in f64.

#![allow(dead_code)]

use std::collections::BTreeMap;

use halfnet_core::layers::PoolMode;
use halfnet_core::netdef::{LayerConfig, NetDef};
use halfnet_core::{Shape, Tensor};

/// Value of a binary16 bit pattern, from the IEEE field definitions.
pub fn decode_half(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1F) as i32;
    let mant = (bits & 0x3FF) as f64;
    match exp {
        0 => sign * mant * 2f64.powi(-24),
        31 if mant == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + mant / 1024.0) * 2f64.powi(exp - 15),
    }
}

/// Correctly rounded (ties to even) binary16 value of `x`, as an f64.
///
/// The quantum of the binade holding `x` is 2^(e-10) with `e` clamped at
/// the subnormal floor of -14. Dividing by a power of two is exact in f64,
/// so `round_ties_even` sees the exact quotient.
pub fn round_to_half(x: f32) -> f64 {
    let x = x as f64;
    if x.is_nan() || x.is_infinite() || x == 0.0 {
        return x;
    }
    let e = x.abs().log2().floor() as i32;
    // log2 can be off by one right at a power of two; fix the binade.
    let e = if 2f64.powi(e) > x.abs() {
        e - 1
    } else if 2f64.powi(e + 1) <= x.abs() {
        e + 1
    } else {
        e
    };
    let q = 2f64.powi(e.max(-14) - 10);
    let r = (x / q).round_ties_even() * q;
    if r.abs() > 65504.0 {
        x.signum() * f64::INFINITY
    } else if r == 0.0 {
        // Keep the sign of the input on underflow.
        0.0f64.copysign(x)
    } else {
        r
    }
}

/// Nearest finite half by exhaustive search, ties to the even pattern.
/// Slow; for spot checks of the arithmetic oracle.
pub fn nearest_half_by_search(x: f32) -> f64 {
    let x = x as f64;
    let mut best: Option<(f64, u16)> = None;
    for bits in 0u16..=0x7BFF {
        let v = decode_half(bits).copysign(x);
        let d = (v - x).abs();
        best = match best {
            None => Some((d, bits)),
            Some((bd, bb)) if d < bd || (d == bd && bits & 1 == 0 && bb & 1 == 1) => Some((d, bits)),
            keep => keep,
        };
    }
    // Beyond 65504 + half an ulp (16) the result is infinite.
    if x.abs() >= 65520.0 {
        return x.signum() * f64::INFINITY;
    }
    decode_half(best.unwrap().1).copysign(x)
}

/// True when `bits` encodes exactly `expected` (same sign for zeros, any
/// NaN for NaN).
pub fn half_matches(bits: u16, expected: f64) -> bool {
    let got = decode_half(bits);
    if expected.is_nan() {
        return got.is_nan();
    }
    got == expected && got.is_sign_negative() == expected.is_sign_negative()
}

/// Tensor values widened to f64.
pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.to_f32_vec().into_iter().map(f64::from).collect()
}

/// Evaluates `net` in f64. `weights` may be of either dtype; values are
/// widened exactly. Returns the last layer's output.
pub fn reference_forward(net: &NetDef, weights: &BTreeMap<String, Tensor>, input: &Tensor) -> (Shape, Vec<f64>) {
    let mut blobs: BTreeMap<String, (Shape, Vec<f64>)> = BTreeMap::new();
    let mut last = None;
    for layer in &net.layers {
        let config = layer.config().expect("valid layer");
        let w: Vec<Vec<f64>> = layer.weight_names.iter().map(|n| to_f64(&weights[n])).collect();
        let ins: Vec<&(Shape, Vec<f64>)> = layer.inputs.iter().map(|n| &blobs[n]).collect();
        let out = match &config {
            LayerConfig::Input { .. } => (input.shape(), to_f64(input)),
            LayerConfig::Convolution(c) => conv(
                &ins[0].1,
                ins[0].0,
                &w[0],
                w.get(1).map(|v| v.as_slice()),
                c.num_output,
                c.kernel,
                c.stride,
                c.pad,
            ),
            LayerConfig::Pooling(c) => pool(&ins[0].1, ins[0].0, c.mode, c.kernel, c.stride, c.pad),
            LayerConfig::ReLU { negative_slope } => {
                let s = *negative_slope as f64;
                (ins[0].0, ins[0].1.iter().map(|&x| if x > 0.0 { x } else { x * s }).collect())
            }
            LayerConfig::InnerProduct(c) => {
                let (shape, x) = ins[0];
                let k = shape.item_len();
                let mut y = vec![0.0; shape.n * c.num_output];
                for n in 0..shape.n {
                    for o in 0..c.num_output {
                        let dot: f64 = (0..k).map(|i| w[0][o * k + i] * x[n * k + i]).sum();
                        y[n * c.num_output + o] = dot + w.get(1).map_or(0.0, |b| b[o]);
                    }
                }
                (Shape::new(shape.n, c.num_output, 1, 1), y)
            }
            LayerConfig::BatchNorm(c) => {
                let (shape, x) = ins[0];
                let stats = c.use_global_stats.then(|| (w[0].clone(), w[1].clone()));
                (*shape, batchnorm(x, *shape, c.epsilon as f64, stats))
            }
            LayerConfig::Scale(c) => {
                let (shape, x) = ins[0];
                let sp = shape.spatial();
                let y = x
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let ch = (i / sp) % shape.c;
                        v * w[0][ch] + if c.bias { w[1][ch] } else { 0.0 }
                    })
                    .collect();
                (*shape, y)
            }
            LayerConfig::Eltwise(c) => {
                let shape = ins[0].0;
                let mut y = vec![0.0; shape.count()];
                for (k, (_, x)) in ins.iter().enumerate() {
                    let coeff = c.coeff(k) as f64;
                    for (yi, xi) in y.iter_mut().zip(x) {
                        *yi += coeff * xi;
                    }
                }
                (shape, y)
            }
            LayerConfig::Softmax { .. } => {
                let (shape, x) = ins[0];
                let sp = shape.spatial();
                let mut y = vec![0.0; x.len()];
                for n in 0..shape.n {
                    for p in 0..sp {
                        let idx = |c: usize| (n * shape.c + c) * sp + p;
                        let m = (0..shape.c).map(|c| x[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = (0..shape.c).map(|c| (x[idx(c)] - m).exp()).sum();
                        for c in 0..shape.c {
                            y[idx(c)] = (x[idx(c)] - m).exp() / total;
                        }
                    }
                }
                (*shape, y)
            }
        };
        last = Some(layer.outputs[0].clone());
        blobs.insert(layer.outputs[0].clone(), out);
    }
    blobs.remove(&last.unwrap()).unwrap()
}

fn extent(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

#[allow(clippy::too_many_arguments)]
pub fn conv(
    x: &[f64],
    s: Shape,
    w: &[f64],
    b: Option<&[f64]>,
    num_output: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Shape, Vec<f64>) {
    let (oh, ow) = (extent(s.h, k, stride, pad), extent(s.w, k, stride, pad));
    let mut y = vec![0.0; s.n * num_output * oh * ow];
    for n in 0..s.n {
        for o in 0..num_output {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..s.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let xv = x[((n * s.c + c) * s.h + iy as usize) * s.w + ix as usize];
                                acc += w[((o * s.c + c) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    y[((n * num_output + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (Shape::new(s.n, num_output, oh, ow), y)
}

pub fn pool(x: &[f64], s: Shape, mode: PoolMode, k: usize, stride: usize, pad: usize) -> (Shape, Vec<f64>) {
    let (oh, ow) = (extent(s.h, k, stride, pad), extent(s.w, k, stride, pad));
    let mut y = vec![0.0; s.n * s.c * oh * ow];
    for plane in 0..s.n * s.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * stride) as isize - pad as isize;
                let x0 = (ox * stride) as isize - pad as isize;
                // Window clipped to the padded extent; padding counts toward the average.
                let y1 = (y0 + k as isize).min((s.h + pad) as isize);
                let x1 = (x0 + k as isize).min((s.w + pad) as isize);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                let mut vals = Vec::new();
                for iy in y0.max(0)..y1.min(s.h as isize) {
                    for ix in x0.max(0)..x1.min(s.w as isize) {
                        vals.push(x[plane * s.h * s.w + iy as usize * s.w + ix as usize]);
                    }
                }
                y[plane * oh * ow + oy * ow + ox] = match mode {
                    PoolMode::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    PoolMode::Avg => vals.iter().sum::<f64>() / area,
                };
            }
        }
    }
    (Shape::new(s.n, s.c, oh, ow), y)
}

/// Per-channel normalization with the biased variance.
pub fn batchnorm(x: &[f64], s: Shape, eps: f64, stats: Option<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let sp = s.spatial();
    let mut y = vec![0.0; x.len()];
    for c in 0..s.c {
        let idx: Vec<usize> = (0..s.n).flat_map(|n| ((n * s.c + c) * sp)..((n * s.c + c + 1) * sp)).collect();
        let (mean, var) = match &stats {
            Some((m, v)) => (m[c], v[c]),
            None => {
                let m = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
                let v = idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
                (m, v)
            }
        };
        let inv = 1.0 / (var + eps).sqrt();
        for &i in &idx {
            y[i] = (x[i] - mean) * inv;
        }
    }
    y
}

/// Mean and biased variance in f64.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64;
    (m, v)
}

/// Index of the largest value, first on ties.
pub fn argmax(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}
