use std::collections::BTreeMap;
use std::time::Instant;

use super::{forward, EngineError, ForwardPlan};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Measurement {
    pub median_seconds: f64,
    /// Wall time of each timed run, in run order.
    pub run_seconds: Vec<f64>,
    pub peak_bytes: usize,
    /// Elements converted between dtypes in one pass.
    pub conversion_count: u64,
    pub output: Tensor,
}

/// Runs `warmup` untimed passes, then `iters` timed ones.
///
/// Every pass must produce bitwise the same output as the first; a
/// mismatch is reported as an error rather than averaged away.
pub fn measure(
    plan: &ForwardPlan,
    weights: &BTreeMap<String, Tensor>,
    input: &Tensor,
    iters: usize,
    warmup: usize,
) -> Result<Measurement, EngineError> {
    if iters == 0 {
        return Err(EngineError::ZeroIters);
    }
    let mut reference: Option<Tensor> = None;
    let mut check = |iteration: usize, out: Tensor| -> Result<(), EngineError> {
        match &reference {
            None => reference = Some(out),
            Some(r) if r.bitwise_eq(&out) => {}
            Some(_) => return Err(EngineError::Nondeterministic { iteration, dtype: plan.dtype }),
        }
        Ok(())
    };

    for i in 0..warmup {
        check(i, forward(plan, weights, input)?.output)?;
    }
    let mut run_seconds = Vec::with_capacity(iters);
    let mut peak_bytes = 0;
    let mut conversion_count = 0;
    for i in 0..iters {
        let start = Instant::now();
        let run = forward(plan, weights, input)?;
        run_seconds.push(start.elapsed().as_secs_f64());
        peak_bytes = peak_bytes.max(run.meter.peak_bytes());
        conversion_count = run.meter.conversion_count();
        check(warmup + i, run.output)?;
    }
    let output = reference.expect("at least one run");
    Ok(Measurement { median_seconds: median(&run_seconds), run_seconds, peak_bytes, conversion_count, output })
}

fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}
