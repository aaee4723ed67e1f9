//! Fixtures shared by the criterion benchmarks.

use std::collections::BTreeMap;

use halfnet_core::netdef::convert_weights;
use halfnet_core::tools::{random_weights, Arch};
use halfnet_core::{plan, Dtype, ForwardPlan, HalfBits, Tensor};

/// Seed for every fixture, so runs compare like with like.
pub const SEED: u64 = 42;

/// A planned network with weights and an input, all in one dtype.
pub struct Fixture {
    pub plan: ForwardPlan,
    pub weights: BTreeMap<String, Tensor>,
    pub input: Tensor,
}

impl Fixture {
    pub fn new(arch: Arch, dtype: Dtype, batch: usize) -> Fixture {
        let net = arch.netdef();
        let plan = plan(&net, batch, dtype).expect("built-in nets plan");
        let weights = random_weights(&net, SEED).expect("built-in nets have weights");
        let weights = match dtype {
            Dtype::F32 => weights.into_blobs(),
            Dtype::F16 => convert_weights(&weights).expect("f32 source").0.into_blobs(),
        };
        let input = Tensor::random(plan.input_shape(), dtype, SEED, 0.0, 1.0).expect("valid shape");
        Fixture { plan, weights, input }
    }
}

/// `n` values uniform in `[lo, hi)`, as f32 and rounded to half.
pub fn values(n: usize, lo: f32, hi: f32) -> (Vec<f32>, Vec<HalfBits>) {
    let t = Tensor::random(halfnet_core::Shape::new(1, 1, 1, n), Dtype::F32, SEED, lo, hi).expect("valid shape");
    let singles = t.to_f32_vec();
    let halves = singles.iter().map(|&x| HalfBits::from_f32(x)).collect();
    (singles, halves)
}
