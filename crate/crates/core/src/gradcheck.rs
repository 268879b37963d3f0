//! Central finite-difference oracles for the logit gradients.
//!
//! These routines only evaluate losses; they never touch the analytic
//! gradient code. For the ACE losses the difference `L(a + h e) - L(a - h e)`
//! is formed without catastrophic cancellation. Perturbing one logit changes
//! one softmax row, and that row's change is written with the exact identity
//! `Z⁻ - Z⁺ = -2 e^{a_k} sinh h`. The cross-entropy difference then becomes a
//! sum of `ln_1p` terms and the regression difference a difference of squares.
//! A plain `f64` evaluation of both losses would carry about `ε·|L| / h ≈ 1e-10`
//! absolute noise, which is too coarse for a `1e-6` relative check on
//! gradients of order `1/(T·K)`.

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::ace::CountAnnotation;
use crate::alphabet::BLANK;
use crate::ctc::{ctc_loss, CtcTarget, BRUTE_FORCE_LIMIT};
use crate::error::{invalid, Error, Result};
use crate::grid::LogitGrid;
use crate::softmax::softmax;

/// Step used throughout the gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Entries whose analytic and numeric magnitudes are both below this are
/// compared in absolute terms.
pub const TINY: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradComparison {
    /// Worst relative error among entries of magnitude `>= TINY`.
    pub max_rel_error: f64,
    /// Worst absolute error among the remaining tiny entries.
    pub max_abs_error_tiny: f64,
    pub entries: usize,
}

impl GradComparison {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error_tiny < TINY
    }

    /// Fold another comparison into this one, keeping the worst errors.
    pub fn merge(self, other: GradComparison) -> GradComparison {
        GradComparison {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error_tiny: self.max_abs_error_tiny.max(other.max_abs_error_tiny),
            entries: self.entries + other.entries,
        }
    }
}

impl Default for GradComparison {
    fn default() -> Self {
        Self { max_rel_error: 0.0, max_abs_error_tiny: 0.0, entries: 0 }
    }
}

pub fn compare_gradients(analytic: &Array2<f64>, numeric: &Array2<f64>) -> Result<GradComparison> {
    if analytic.dim() != numeric.dim() {
        return Err(invalid(format!(
            "gradient shapes differ: {:?} vs {:?}",
            analytic.dim(),
            numeric.dim()
        )));
    }
    let mut cmp = GradComparison { entries: analytic.len(), ..Default::default() };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = (a - n).abs();
        if scale < TINY {
            cmp.max_abs_error_tiny = cmp.max_abs_error_tiny.max(err);
        } else {
            cmp.max_rel_error = cmp.max_rel_error.max(err / scale);
        }
    }
    Ok(cmp)
}

/// Per-row exponentials relative to the row maximum.
struct RowExp {
    exps: Array2<f64>,
    norms: Vec<f64>,
}

impl RowExp {
    fn new(logits: &LogitGrid) -> Self {
        let mut exps = logits.values().clone();
        let mut norms = Vec::with_capacity(exps.nrows());
        for mut row in exps.axis_iter_mut(Axis(0)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|a| (a - max).exp());
            norms.push(row.sum());
        }
        Self { exps, norms }
    }

    fn probs(&self) -> Array2<f64> {
        let mut p = self.exps.clone();
        for (mut row, &z) in p.axis_iter_mut(Axis(0)).zip(&self.norms) {
            row /= z;
        }
        p
    }

    /// Row `t` at `a_k^t - h` and the exact change of every entry between
    /// `a_k^t - h` and `a_k^t + h`.
    fn perturbed(&self, t: usize, k: usize, h: f64, minus: &mut [f64], diff: &mut [f64]) {
        let e = self.exps.row(t);
        let ek = e[k];
        let rest: f64 = e.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| v).sum();
        let z_plus = rest + ek * h.exp();
        let z_minus = rest + ek * (-h).exp();
        let two_sinh = 2.0 * h.sinh();
        let denom = z_plus * z_minus;
        for (j, &ej) in e.iter().enumerate() {
            if j == k {
                minus[j] = ek * (-h).exp() / z_minus;
                diff[j] = ek * rest * two_sinh / denom;
            } else {
                minus[j] = ej / z_minus;
                diff[j] = -ej * ek * two_sinh / denom;
            }
        }
    }
}

fn ace_numeric_gradient(
    logits: &LogitGrid,
    ann: &CountAnnotation,
    h: f64,
    delta_loss: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<Array2<f64>> {
    if ann.total_timesteps() != logits.timesteps() || ann.classes() != logits.classes() {
        return Err(invalid("annotation does not match the logit grid"));
    }
    let rows = RowExp::new(logits);
    let probs = rows.probs();
    let sums = probs.sum_axis(Axis(0));
    let k_len = logits.classes();
    let mut minus = vec![0.0; k_len];
    let mut diff = vec![0.0; k_len];
    let mut sums_minus = vec![0.0; k_len];
    let mut out = Array2::zeros(logits.values().raw_dim());
    for t in 0..logits.timesteps() {
        for k in 0..k_len {
            rows.perturbed(t, k, h, &mut minus, &mut diff);
            // Column sums change only through row t.
            for j in 0..k_len {
                sums_minus[j] = (sums[j] - probs[[t, j]]) + minus[j];
            }
            out[[t, k]] = delta_loss(&sums_minus, &diff) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Finite-difference gradient of the cross-entropy ACE loss.
///
/// Valid while every annotated class keeps `ȳ_k` above the logarithm clamp.
pub fn ace_ce_numeric_gradient(logits: &LogitGrid, ann: &CountAnnotation, h: f64) -> Result<Array2<f64>> {
    let targets = ann.normalized();
    ace_numeric_gradient(logits, ann, h, |sums_minus, diff| {
        // ln ȳ⁺ - ln ȳ⁻ = ln(1 + (y⁺ - y⁻) / y⁻); the 1/T factors cancel.
        -targets
            .iter()
            .zip(sums_minus.iter().zip(diff))
            .filter(|(&n, _)| n > 0.0)
            .map(|(&n, (&s, &d))| n * (d / s).ln_1p())
            .sum::<f64>()
    })
}

/// Finite-difference gradient of the regression ACE loss.
pub fn ace_regression_numeric_gradient(logits: &LogitGrid, ann: &CountAnnotation, h: f64) -> Result<Array2<f64>> {
    let counts: Vec<f64> = ann.counts().iter().map(|&n| n as f64).collect();
    ace_numeric_gradient(logits, ann, h, |sums_minus, diff| {
        // ½[(N - y⁺)² - (N - y⁻)²] = d (y⁻ + d/2 - N) with d = y⁺ - y⁻.
        counts
            .iter()
            .zip(sums_minus.iter().zip(diff))
            .map(|(&n, (&s, &d))| d * (s + 0.5 * d - n))
            .sum::<f64>()
    })
}

/// Central-difference CTC gradient from explicit path enumeration.
///
/// The target probability is linear in each row: `P = Σ_j y_j^t A_j^t`, where
/// `A_j^t` sums the probabilities of every valid path through class `j` at
/// time `t` with row `t` left out. The coefficients come from enumerating all
/// `K^T` paths, so `ln P⁺ - ln P⁻ = ln_1p(ΔP / P⁻)` is exact up to rounding.
/// Limited to `T, K <= BRUTE_FORCE_LIMIT`.
pub fn ctc_enumerated_numeric_gradient(logits: &LogitGrid, target: &CtcTarget, h: f64) -> Result<Array2<f64>> {
    let (t_len, k_len) = (logits.timesteps(), logits.classes());
    if t_len > BRUTE_FORCE_LIMIT || k_len > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(format!(
            "enumeration limited to T, K <= {BRUTE_FORCE_LIMIT}; got T={t_len}, K={k_len}"
        )));
    }
    if target.labels().iter().any(|&l| l >= k_len) {
        return Err(invalid("target label outside the prediction classes"));
    }
    let rows = RowExp::new(logits);
    let y = rows.probs();
    let mut coef = Array2::<f64>::zeros((t_len, k_len));
    let mut path = vec![0usize; t_len];
    'paths: loop {
        if collapses_to(&path, target.labels()) {
            for t in 0..t_len {
                let others: f64 = (0..t_len).filter(|&u| u != t).map(|u| y[[u, path[u]]]).product();
                coef[[t, path[t]]] += others;
            }
        }
        let mut i = t_len;
        loop {
            if i == 0 {
                break 'paths;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < k_len {
                break;
            }
            path[i] = 0;
        }
    }
    if coef.row(0).iter().all(|&c| c == 0.0) {
        return Err(Error::Capacity("target cannot be emitted in the available timesteps".into()));
    }
    let mut minus = vec![0.0; k_len];
    let mut diff = vec![0.0; k_len];
    let mut out = Array2::zeros((t_len, k_len));
    for t in 0..t_len {
        let a = coef.row(t);
        for k in 0..k_len {
            rows.perturbed(t, k, h, &mut minus, &mut diff);
            let p_minus: f64 = minus.iter().zip(a.iter()).map(|(m, c)| m * c).sum();
            let dp: f64 = diff.iter().zip(a.iter()).map(|(d, c)| d * c).sum();
            out[[t, k]] = -(dp / p_minus).ln_1p() / (2.0 * h);
        }
    }
    Ok(out)
}

fn collapses_to(path: &[usize], labels: &[usize]) -> bool {
    let mut it = labels.iter();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != BLANK && it.next() != Some(&c) {
            return false;
        }
        prev = Some(c);
    }
    it.next().is_none()
}

/// Plain central-difference gradient of the CTC loss.
pub fn ctc_numeric_gradient(logits: &LogitGrid, target: &CtcTarget, h: f64) -> Result<Array2<f64>> {
    let mut work = logits.values().clone();
    let mut out = Array2::zeros(work.raw_dim());
    for t in 0..work.nrows() {
        for k in 0..work.ncols() {
            let orig = work[[t, k]];
            work[[t, k]] = orig + h;
            let plus = ctc_loss(&softmax(&LogitGrid::new(work.clone())?), target)?.loss;
            work[[t, k]] = orig - h;
            let minus = ctc_loss(&softmax(&LogitGrid::new(work.clone())?), target)?.loss;
            work[[t, k]] = orig;
            out[[t, k]] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}
