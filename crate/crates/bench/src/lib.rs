//! Fixtures shared by the criterion benchmarks of the loss kernels.

use ace_core::bench::{make_inputs, BenchInputs, BenchSpec};
use ace_core::train::LossKind;
use ace_core::{ace_ce_loss, ace_regression_loss, ctc_loss, Result};

pub const LOSSES: [LossKind; 3] = [LossKind::AceCe, LossKind::AceRegression, LossKind::Ctc];

/// A 37-class scene-text setting and the 7357-class large-vocabulary one,
/// both at T = 144 and batch 64.
pub fn standard_specs() -> Vec<BenchSpec> {
    vec![BenchSpec::new(144, 37, 64, 10), BenchSpec::new(144, 7357, 64, 20)]
}

/// CTC specs at fixed `(T, K)` with growing target length.
pub fn seq_len_sweep() -> Vec<BenchSpec> {
    [5, 20, 60].into_iter().map(|s| BenchSpec::new(144, 37, 16, s)).collect()
}

pub fn fixture(spec: &BenchSpec) -> Result<BenchInputs> {
    make_inputs(spec)
}

/// Loss and gradients for `batch` samples, cycling through the input pool.
/// Returns the summed loss.
pub fn run_batch(kind: LossKind, inputs: &BenchInputs, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batch {
        let j = i % inputs.probs.len();
        let lg = match kind {
            LossKind::AceCe => ace_ce_loss(&inputs.probs[j], &inputs.counts[j])?,
            LossKind::AceRegression => ace_regression_loss(&inputs.probs[j], &inputs.counts[j])?,
            LossKind::Ctc => ctc_loss(&inputs.probs[j], &inputs.targets[j])?,
        };
        total += lg.loss;
    }
    Ok(total)
}
