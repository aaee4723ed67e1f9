//! Batch normalization with half-safe moment estimation.
//!
//! Two things go wrong when moments are computed naively in binary16. Long
//! sums of image-scale values (and worse, of their squares) pass 65504, and
//! the `1/n` factor for a large `n` is below the smallest half subnormal, so
//! a mean multiplied by a half-rounded `1/n` collapses to zero.
//!
//! [`grouped_mean`] keeps every running sum short by averaging contiguous
//! groups and then averaging the group means, with all `1/size` factors kept
//! in single precision. [`shifted_variance`] centers the data, multiplies by
//! a power of two chosen so the centered magnitudes sit near 8, squares and
//! averages, then divides by the squared shift once at the end.

use super::{check_same_dtype, dispatch, output, typed, Element, LayerError};
use crate::tensor::{Shape, Tensor};

const NAME: &str = "batch_norm";

/// Largest run of elements summed sequentially inside [`grouped_mean`].
/// 256 copies of 255 still fit below 65504.
pub const BATCHNORM_LEAF: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShiftPolicy {
    /// `2^(3 - ceil(log2(max |x - mean|)))`, exponent clamped to [-10, 10].
    Auto,
    /// A fixed power of two. `Fixed(1.0)` disables shifting.
    Fixed(f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub group_count: usize,
    pub shift: ShiftPolicy,
    pub epsilon: f32,
    pub use_global_stats: bool,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { group_count: 32, shift: ShiftPolicy::Auto, epsilon: 1e-5, use_global_stats: false }
    }
}

impl BatchNormConfig {
    /// One group and no shift: the plain textbook pipeline.
    pub fn naive() -> Self {
        BatchNormConfig { group_count: 1, shift: ShiftPolicy::Fixed(1.0), ..Default::default() }
    }

    /// Checks the config against the number of elements reduced per channel.
    pub fn validate(&self, reduced_len: usize) -> Result<(), LayerError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(LayerError::config(NAME, format!("epsilon {} must be finite and non-negative", self.epsilon)));
        }
        if let ShiftPolicy::Fixed(s) = self.shift {
            if !is_power_of_two(s) {
                return Err(LayerError::config(NAME, format!("shift {s} is not a power of two")));
            }
        }
        if self.use_global_stats {
            return Ok(());
        }
        if self.group_count == 0 {
            return Err(LayerError::config(NAME, "group_count must be at least 1"));
        }
        if self.group_count > reduced_len {
            return Err(LayerError::config(
                NAME,
                format!("group_count {} exceeds the {reduced_len} elements per channel", self.group_count),
            ));
        }
        Ok(())
    }
}

fn is_power_of_two(s: f32) -> bool {
    s.is_normal() && s > 0.0 && s.to_bits() & 0x007F_FFFF == 0
}

/// Mean of `values` computed as a mean of contiguous group means.
///
/// The `n` elements are split into `groups` runs whose sizes differ by at
/// most one (longer runs first). A run of at most [`BATCHNORM_LEAF`] elements
/// is summed pairwise and multiplied by the single-precision `1/size`; a
/// longer run is itself reduced by grouping. The group means are scaled by
/// single-precision weights `size / n` and summed pairwise, so the estimator
/// is the plain arithmetic mean up to rounding. `groups == 1` is the naive
/// running sum times `1/n`.
pub fn grouped_mean<E: Element>(values: &[E], groups: usize) -> Result<E, LayerError> {
    if values.is_empty() {
        return Err(LayerError::Empty { layer: NAME.to_string() });
    }
    if groups == 0 || groups > values.len() {
        return Err(LayerError::config(NAME, format!("group count {groups} must be in 1..={}", values.len())));
    }
    if groups == 1 {
        let sum = values.iter().fold(E::ZERO, |acc, &x| acc.add(x));
        return Ok(sum.scale(1.0 / values.len() as f32));
    }
    Ok(grouped_mean_unchecked(values, groups))
}

fn pairwise_sum<E: Element>(values: &[E]) -> E {
    match values.len() {
        0 => E::ZERO,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n.div_ceil(2));
            pairwise_sum(a).add(pairwise_sum(b))
        }
    }
}

fn grouped_mean_unchecked<E: Element>(values: &[E], groups: usize) -> E {
    let n = values.len();
    let base = n / groups;
    let extra = n % groups;
    let mut start = 0;
    let mut weighted = Vec::with_capacity(groups);
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        let group = &values[start..start + size];
        start += size;
        let group_mean = if size <= BATCHNORM_LEAF {
            pairwise_sum(group).scale(1.0 / size as f32)
        } else {
            grouped_mean_unchecked(group, groups.min(size))
        };
        weighted.push(group_mean.scale((size as f64 / n as f64) as f32));
    }
    pairwise_sum(&weighted)
}

/// Power-of-two factor that brings `max_abs` to roughly 8.
fn auto_shift(max_abs: f32) -> f32 {
    if !max_abs.is_finite() || max_abs <= 0.0 {
        return 1.0;
    }
    let bits = max_abs.to_bits();
    let exp = ((bits >> 23) & 0xFF) as i32;
    let ceil_log2 = if exp == 0 {
        // Single subnormal; the clamp below dominates anyway.
        -126
    } else if bits & 0x007F_FFFF == 0 {
        exp - 127
    } else {
        exp - 127 + 1
    };
    let e = (3 - ceil_log2).clamp(-10, 10);
    2f32.powi(e)
}

/// Shift factor that [`shifted_variance`] would use for these values.
pub(crate) fn shift_for<E: Element>(centered: &[E], policy: ShiftPolicy) -> f32 {
    match policy {
        ShiftPolicy::Fixed(s) => s,
        ShiftPolicy::Auto => {
            let max_abs = centered.iter().fold(0.0f32, |m, x| {
                let a = x.widen().abs();
                if a > m || a.is_nan() {
                    a
                } else {
                    m
                }
            });
            auto_shift(max_abs)
        }
    }
}

/// Two-pass variance around `mean` with shift-before-square.
///
/// Centered values are multiplied by the shift `s` through the float-scalar
/// path, squared, averaged with [`grouped_mean`] using `cfg.group_count`,
/// and the average is multiplied by the single `1 / s^2`.
pub fn shifted_variance<E: Element>(values: &[E], mean: E, cfg: &BatchNormConfig) -> Result<E, LayerError> {
    if values.is_empty() {
        return Err(LayerError::Empty { layer: NAME.to_string() });
    }
    if let ShiftPolicy::Fixed(s) = cfg.shift {
        if !is_power_of_two(s) {
            return Err(LayerError::config(NAME, format!("shift {s} is not a power of two")));
        }
    }
    let centered: Vec<E> = values.iter().map(|&x| x.sub(mean)).collect();
    let s = shift_for(&centered, cfg.shift);
    let squares: Vec<E> = centered
        .iter()
        .map(|&d| {
            let d = if s == 1.0 { d } else { d.scale(s) };
            d.mul(d)
        })
        .collect();
    let shifted = grouped_mean(&squares, cfg.group_count)?;
    Ok(if s == 1.0 { shifted } else { shifted.scale(1.0 / (s * s)) })
}

/// Normalizes each channel over its N·H·W elements.
///
/// With `stats` the per-channel mean and variance come from the given
/// slices; otherwise they are estimated from the batch. The variance is
/// widened and `1/sqrt(var + eps)` is evaluated in single precision, then
/// applied to `x - mean` through the float-scalar path.
pub fn batchnorm_into<E: Element>(
    input: &[E],
    shape: Shape,
    cfg: &BatchNormConfig,
    stats: Option<(&[E], &[E])>,
    out: &mut [E],
) -> Result<(), LayerError> {
    let spatial = shape.spatial();
    let reduced = shape.n * spatial;
    let mut values = Vec::with_capacity(if stats.is_some() { 0 } else { reduced });
    for c in 0..shape.c {
        let planes = (0..shape.n).map(|n| (n * shape.c + c) * spatial);
        let (mean, var) = match stats {
            Some((means, vars)) => (means[c], vars[c].widen()),
            None => {
                values.clear();
                for start in planes.clone() {
                    values.extend_from_slice(&input[start..start + spatial]);
                }
                let mean = grouped_mean(&values, cfg.group_count)?;
                let var = shifted_variance(&values, mean, cfg)?;
                (mean, var.widen())
            }
        };
        let inv_std = 1.0 / (var + cfg.epsilon).sqrt();
        for start in planes {
            for i in start..start + spatial {
                out[i] = input[i].sub(mean).scale(inv_std);
            }
        }
    }
    Ok(())
}

pub fn batchnorm_forward(
    input: &Tensor,
    cfg: &BatchNormConfig,
    stats: Option<(&Tensor, &Tensor)>,
) -> Result<Tensor, LayerError> {
    let shape = input.shape();
    cfg.validate(shape.n * shape.spatial())?;
    if cfg.use_global_stats != stats.is_some() {
        return Err(LayerError::config(NAME, "statistics blobs must be given exactly when use_global_stats is set"));
    }
    if let Some((m, v)) = stats {
        for t in [m, v] {
            check_same_dtype(NAME, input.dtype(), t)?;
            if t.len() != shape.c {
                return Err(LayerError::shape(
                    NAME,
                    format!("statistics {} do not match {} channels", t.shape(), shape.c),
                ));
            }
        }
    }
    dispatch!(input, E => {
        let mut out = vec![<E as Element>::ZERO; input.len()];
        let stats = stats.map(|(m, v)| (typed::<E>(m), typed::<E>(v)));
        batchnorm_into::<E>(typed(input), shape, cfg, stats, &mut out)?;
        Ok(output(shape, out))
    })
}
