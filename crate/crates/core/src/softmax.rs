use ndarray::{Array2, Axis, Zip};

use crate::error::{invalid, Result};
use crate::grid::{LogitGrid, ProbGrid};

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax(logits: &LogitGrid) -> ProbGrid {
    let mut out = Array2::zeros(logits.values().raw_dim());
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(logits.values().axis_iter(Axis(0)))
        .for_each(|mut dst, src| {
            softmax_row_into(src.as_slice().expect("standard layout"), dst.as_slice_mut().expect("owned"));
        });
    ProbGrid::from_normalized(out, logits.shape2d())
}

/// Softmax of one row of logits, written into `out`.
pub fn softmax_row_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &a) in out.iter_mut().zip(logits) {
        *o = (a - max).exp();
        z += *o;
    }
    let inv = 1.0 / z;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Vector-Jacobian product of softmax: `v_j = Σ_i u_i y_i (δ_ij - y_j)`.
///
/// Evaluated in `O(K)` as `v = y ⊙ (u - <u, y>)`.
pub fn softmax_jacobian_apply(probs_row: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if probs_row.len() != upstream.len() {
        return Err(invalid(format!(
            "softmax row has {} classes but upstream gradient has {}",
            probs_row.len(),
            upstream.len()
        )));
    }
    let mut out = upstream.to_vec();
    jacobian_apply_in_place(probs_row, &mut out);
    Ok(out)
}

/// In-place form of [`softmax_jacobian_apply`]: `grad` holds `u` on entry.
#[inline]
pub(crate) fn jacobian_apply_in_place(probs_row: &[f64], grad: &mut [f64]) {
    let dot: f64 = probs_row.iter().zip(grad.iter()).map(|(y, u)| y * u).sum();
    for (g, &y) in grad.iter_mut().zip(probs_row) {
        *g = y * (*g - dot);
    }
}
