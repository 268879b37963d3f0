//! Connectionist temporal classification, kept as a baseline for ACE.
//!
//! The forward and backward variables are held in log space over the
//! blank-interleaved target `ε l1 ε l2 … ε`. The gradient is formed in
//! probability space from the `α·β` products and then pushed through the
//! softmax Jacobian one timestep at a time.

use ndarray::{Array2, Axis};

use crate::ace::LossGrad;
use crate::alphabet::{Alphabet, BLANK};
use crate::error::{invalid, Error, Result};
use crate::grid::ProbGrid;

/// Largest `T` and `K` accepted by [`ctc_brute_force`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CtcTarget {
    labels: Vec<usize>,
    extended: Vec<usize>,
}

impl CtcTarget {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.contains(&BLANK) {
            return Err(invalid("CTC target labels must not contain the blank"));
        }
        let mut extended = Vec::with_capacity(2 * labels.len() + 1);
        extended.push(BLANK);
        for &l in &labels {
            extended.push(l);
            extended.push(BLANK);
        }
        Ok(Self { labels, extended })
    }

    pub fn from_annotation(annotation: &str, alphabet: &Alphabet) -> Result<Self> {
        Self::new(alphabet.encode(annotation)?)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Blank-interleaved labels, length `2|S| + 1`.
    pub fn extended(&self) -> &[usize] {
        &self.extended
    }

    /// Fewest timesteps that can emit the target: one per label plus one
    /// separating blank per adjacent repeat.
    pub fn min_timesteps(&self) -> usize {
        let repeats = self.labels.windows(2).filter(|w| w[0] == w[1]).count();
        self.labels.len() + repeats
    }

    fn check(&self, probs: &ProbGrid) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= probs.classes()) {
            return Err(invalid(format!(
                "label {bad} outside the {} prediction classes",
                probs.classes()
            )));
        }
        if self.min_timesteps() > probs.timesteps() {
            return Err(Error::Capacity(format!(
                "target needs at least {} timesteps, prediction has {}",
                self.min_timesteps(),
                probs.timesteps()
            )));
        }
        Ok(())
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Negative log-likelihood of the target summed over all alignments, with
/// its gradient with respect to the logits.
pub fn ctc_loss(probs: &ProbGrid, target: &CtcTarget) -> Result<LossGrad> {
    target.check(probs)?;
    let y = probs.values();
    let ext = target.extended();
    let (t_len, l_len) = (y.nrows(), ext.len());
    let emit = |t: usize, s: usize| y[[t, ext[s]]].ln();
    // Skip transitions s-2 -> s are allowed onto a label that differs from the previous label.
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = Array2::from_elem((t_len, l_len), f64::NEG_INFINITY);
    alpha[[0, 0]] = emit(0, 0);
    if l_len > 1 {
        alpha[[0, 1]] = emit(0, 1);
    }
    for t in 1..t_len {
        for s in 0..l_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != f64::NEG_INFINITY {
                alpha[[t, s]] = acc + emit(t, s);
            }
        }
    }

    let mut beta = Array2::from_elem((t_len, l_len), f64::NEG_INFINITY);
    beta[[t_len - 1, l_len - 1]] = emit(t_len - 1, l_len - 1);
    if l_len > 1 {
        beta[[t_len - 1, l_len - 2]] = emit(t_len - 1, l_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..l_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < l_len {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < l_len && can_skip(s + 2) {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            if acc != f64::NEG_INFINITY {
                beta[[t, s]] = acc + emit(t, s);
            }
        }
    }

    let mut log_p = alpha[[t_len - 1, l_len - 1]];
    if l_len > 1 {
        log_p = log_add(log_p, alpha[[t_len - 1, l_len - 2]]);
    }
    if log_p == f64::NEG_INFINITY {
        return Err(invalid("target has zero probability under the prediction"));
    }

    // ∂L/∂y_k^t = -(1/P) Σ_{s: ext[s]=k} α_t(s) β_t(s) / (y_k^t)²; α and β both
    // include the emission at t. The row buffer holds y ⊙ ∂L/∂y, formed in log
    // space, before the Jacobian v = y ⊙ (g - <g, y>) is applied.
    let mut grad = Array2::zeros(y.raw_dim());
    for (t, (yr, mut gr)) in y.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).enumerate() {
        let gr = gr.as_slice_mut().expect("owned");
        for s in 0..l_len {
            let ab = alpha[[t, s]] + beta[[t, s]];
            if ab == f64::NEG_INFINITY {
                continue;
            }
            let k = ext[s];
            gr[k] -= (ab - log_p - yr[k].ln()).exp();
        }
        let dot: f64 = gr.iter().sum();
        for (g, &p) in gr.iter_mut().zip(yr.iter()) {
            *g -= p * dot;
        }
    }

    Ok(LossGrad { loss: -log_p, grad_logits: Some(grad), grad_probs: None })
}

/// Reference CTC loss by enumerating all `K^T` label paths.
pub fn ctc_brute_force(probs: &ProbGrid, target: &CtcTarget) -> Result<f64> {
    let (t_len, k) = (probs.timesteps(), probs.classes());
    if t_len > BRUTE_FORCE_LIMIT || k > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(format!(
            "brute force limited to T, K <= {BRUTE_FORCE_LIMIT}; got T={t_len}, K={k}"
        )));
    }
    target.check(probs)?;
    let y = probs.values();
    let mut path = vec![0usize; t_len];
    let mut collapsed = Vec::with_capacity(t_len);
    let mut total = 0.0;
    loop {
        collapsed.clear();
        let mut prev = None;
        for &c in &path {
            if Some(c) != prev && c != BLANK {
                collapsed.push(c);
            }
            prev = Some(c);
        }
        if collapsed == target.labels() {
            total += path.iter().enumerate().map(|(t, &c)| y[[t, c]]).product::<f64>();
        }
        // Odometer increment over K^T paths.
        let mut i = t_len;
        loop {
            if i == 0 {
                return Ok(-total.ln());
            }
            i -= 1;
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Analytic workspace of [`ctc_loss`] for one sample, in bytes: the forward
/// and backward tables over `T x (2|S| + 1)`.
pub fn ctc_workspace_bytes(timesteps: usize, label_len: usize) -> usize {
    2 * timesteps * (2 * label_len + 1) * std::mem::size_of::<f64>()
}
