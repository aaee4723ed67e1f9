use serde::{Deserialize, Serialize};

use super::Element;

/// Association order for reductions.
///
/// `Naive` is one running sum. `Grouped` sums consecutive blocks of `block`
/// terms and then adds the block partials left to right. Either way the
/// order is fixed, so results never depend on scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccumPolicy {
    Naive,
    Grouped { block: usize },
}

impl Default for AccumPolicy {
    fn default() -> Self {
        AccumPolicy::Grouped { block: 256 }
    }
}

impl AccumPolicy {
    /// `0` selects `Naive`, anything else a block size.
    pub fn from_block(block: usize) -> Self {
        if block == 0 {
            AccumPolicy::Naive
        } else {
            AccumPolicy::Grouped { block }
        }
    }

    pub fn block(self) -> usize {
        match self {
            AccumPolicy::Naive => 0,
            AccumPolicy::Grouped { block } => block,
        }
    }
}

/// Sums `term(0) .. term(len - 1)` in the order given by `policy`.
#[inline]
pub fn accumulate<E: Element>(policy: AccumPolicy, len: usize, mut term: impl FnMut(usize) -> E) -> E {
    match policy {
        AccumPolicy::Naive => (0..len).fold(E::ZERO, |acc, i| acc.add(term(i))),
        AccumPolicy::Grouped { block } => {
            let block = block.max(1);
            let mut total = E::ZERO;
            let mut start = 0;
            while start < len {
                let end = (start + block).min(len);
                let partial = (start..end).fold(E::ZERO, |acc, i| acc.add(term(i)));
                total = total.add(partial);
                start = end;
            }
            total
        }
    }
}

/// Dot product with every product and every partial sum rounded.
#[inline]
pub fn dot<E: Element>(policy: AccumPolicy, a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    accumulate(policy, a.len(), |i| a[i].mul(b[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp16::HalfBits;

    fn halves(values: &[f32]) -> Vec<HalfBits> {
        values.iter().map(|&v| HalfBits::from_f32(v)).collect()
    }

    #[test]
    fn grouped_and_naive_agree_when_exact() {
        let v: Vec<f32> = (0..1000).map(|i| (i % 7) as f32).collect();
        let naive = accumulate(AccumPolicy::Naive, v.len(), |i| v[i]);
        let grouped = accumulate(AccumPolicy::Grouped { block: 64 }, v.len(), |i| v[i]);
        assert_eq!(naive, grouped);
    }

    #[test]
    fn grouping_recovers_stagnated_half_sum() {
        // A running half sum of ones sticks at 2048; blocks of 256 do not.
        let ones = vec![HalfBits::ONE; 4096];
        let naive = accumulate(AccumPolicy::Naive, ones.len(), |i| ones[i]);
        assert_eq!(naive.to_f32(), 2048.0);
        let grouped = accumulate(AccumPolicy::default(), ones.len(), |i| ones[i]);
        assert_eq!(grouped.to_f32(), 4096.0);
    }

    #[test]
    fn dot_of_empty_is_zero() {
        let e: [HalfBits; 0] = [];
        assert_eq!(dot(AccumPolicy::default(), &e, &e), HalfBits::ZERO);
    }

    #[test]
    fn half_dot_rounds_products() {
        let a = halves(&[255.0]);
        assert_eq!(dot(AccumPolicy::Naive, &a, &a).to_f32(), 65024.0);
    }

    #[test]
    fn from_block_zero_is_naive() {
        assert_eq!(AccumPolicy::from_block(0), AccumPolicy::Naive);
        assert_eq!(AccumPolicy::from_block(8).block(), 8);
    }
}
