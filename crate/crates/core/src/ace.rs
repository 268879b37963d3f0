//! Aggregation cross-entropy.
//!
//! ACE supervises a `T x K` prediction only through per-class counts. The
//! probabilities of each class are summed over all timesteps
//! (`y_k = Σ_t y_k^t`), normalized by `T`, and compared with the normalized
//! annotation counts `N_k / T`. The blank class absorbs `T - |S|`.
//!
//! Two loss variants are provided:
//!
//! * [`ace_ce_loss`]: cross-entropy `-Σ_k N̄_k ln ȳ_k`, with the logit gradient
//!   `-(1/T) Σ_k' N̄_k' (y_k'^t / ȳ_k') (δ_kk' - y_k^t)` evaluated in `O(K)` per
//!   timestep. Only classes present in the annotation contribute to the sum.
//! * [`ace_regression_loss`]: `½ Σ_k (N_k - y_k)²`, whose probability gradient
//!   `y_k - N_k` is the same at every timestep and is pushed through the
//!   softmax Jacobian row by row.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, BLANK};
use crate::error::{invalid, Error, Result};
use crate::grid::ProbGrid;
use crate::softmax::jacobian_apply_in_place;

/// Lower clamp on `ȳ_k` inside the logarithm of the cross-entropy loss.
pub const LN_CLAMP: f64 = 1e-12;

/// Per-class target counts over `K` classes, blank included.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountAnnotation {
    counts: Vec<usize>,
    total_timesteps: usize,
}

impl CountAnnotation {
    /// Raw counts; they must sum to exactly `total_timesteps`.
    pub fn new(counts: Vec<usize>, total_timesteps: usize) -> Result<Self> {
        if counts.len() < 2 {
            return Err(invalid("count annotation needs at least two classes"));
        }
        let sum: usize = counts.iter().sum();
        if sum != total_timesteps || total_timesteps == 0 {
            return Err(invalid(format!(
                "counts sum to {sum} but total timesteps is {total_timesteps}"
            )));
        }
        Ok(Self { counts, total_timesteps })
    }

    /// Counts of a label-index sequence; the blank takes the remaining timesteps.
    pub fn from_labels(labels: &[usize], classes: usize, total_timesteps: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("count annotation needs at least two classes"));
        }
        if labels.len() > total_timesteps {
            return Err(Error::Capacity(format!(
                "annotation of length {} cannot be emitted in {total_timesteps} timesteps",
                labels.len()
            )));
        }
        let mut counts = vec![0; classes];
        for &l in labels {
            if l == BLANK || l >= classes {
                return Err(invalid(format!("label index {l} is blank or outside 1..{classes}")));
            }
            counts[l] += 1;
        }
        counts[BLANK] = total_timesteps - labels.len();
        Self::new(counts, total_timesteps)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total_timesteps(&self) -> usize {
        self.total_timesteps
    }

    /// `|S|`, the number of non-blank labels.
    pub fn label_count(&self) -> usize {
        self.total_timesteps - self.counts[BLANK]
    }

    /// `N̄_k = N_k / T`, recomputed on every call.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total_timesteps as f64;
        self.counts.iter().map(|&n| n as f64 / t).collect()
    }

    /// `-Σ N̄ ln N̄`: the smallest value the cross-entropy loss can take.
    pub fn entropy(&self) -> f64 {
        self.normalized()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Same label counts, spread over a different number of timesteps.
    pub fn with_timesteps(&self, total_timesteps: usize) -> Result<Self> {
        let labels = self.label_count();
        if labels > total_timesteps {
            return Err(Error::Capacity(format!(
                "{labels} labels cannot be emitted in {total_timesteps} timesteps"
            )));
        }
        let mut counts = self.counts.clone();
        counts[BLANK] = total_timesteps - labels;
        Self::new(counts, total_timesteps)
    }
}

/// Count annotation of a symbol sequence over `T` timesteps.
pub fn counts_from_sequence(annotation: &str, alphabet: &Alphabet, timesteps: usize) -> Result<CountAnnotation> {
    let labels = alphabet.encode(annotation)?;
    CountAnnotation::from_labels(&labels, alphabet.len(), timesteps)
}

/// Expected per-class counts `y_k` and their normalization `ȳ_k = y_k / T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub sums: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Sum class probabilities over timesteps.
pub fn aggregate(probs: &ProbGrid) -> Aggregate {
    let sums = column_sums(probs.values(), 0..probs.timesteps());
    let t = probs.timesteps() as f64;
    let normalized = sums.iter().map(|&s| s / t).collect();
    Aggregate { sums, normalized }
}

fn column_sums(values: &Array2<f64>, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut acc = vec![0.0; values.ncols()];
    for r in rows {
        let row = values.row(r);
        for (a, &y) in acc.iter_mut().zip(row.as_slice().expect("standard layout")) {
            *a += y;
        }
    }
    acc
}

/// Scalar loss with optional gradients, both laid out like the input grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// `∂L/∂a_k^t`.
    pub grad_logits: Option<Array2<f64>>,
    /// `∂L/∂y_k^t`.
    pub grad_probs: Option<Array2<f64>>,
}

fn check_pair(probs: &ProbGrid, ann: &CountAnnotation) -> Result<()> {
    if ann.total_timesteps() != probs.timesteps() {
        return Err(invalid(format!(
            "annotation covers {} timesteps but prediction has {}",
            ann.total_timesteps(),
            probs.timesteps()
        )));
    }
    if ann.classes() != probs.classes() {
        return Err(invalid(format!(
            "annotation has {} classes but prediction has {}",
            ann.classes(),
            probs.classes()
        )));
    }
    Ok(())
}

/// Cross-entropy ACE loss and its gradient with respect to the logits.
pub fn ace_ce_loss(probs: &ProbGrid, ann: &CountAnnotation) -> Result<LossGrad> {
    check_pair(probs, ann)?;
    let values = probs.values();
    let (loss, grad) = ace_ce_rows(values, ann, 0..values.nrows(), |t| t);
    Ok(LossGrad { loss, grad_logits: Some(grad), grad_probs: None })
}

/// Cross-entropy ACE loss on a 2D prediction.
///
/// Cells are visited in the column-major flattening order, so the result is
/// bitwise identical to `ace_ce_loss(&flatten_2d(probs)?, ann)`. The gradient
/// keeps the input's raster layout.
pub fn ace_ce_loss_2d(probs: &ProbGrid, ann: &CountAnnotation) -> Result<LossGrad> {
    let shape = probs
        .shape2d()
        .ok_or_else(|| invalid("ace_ce_loss_2d needs a grid with 2D provenance"))?;
    check_pair(probs, ann)?;
    let (loss, grad) = ace_ce_rows(probs.values(), ann, 0..shape.cells(), |t| shape.raster_of_flat(t));
    Ok(LossGrad { loss, grad_logits: Some(grad), grad_probs: None })
}

/// Shared kernel: `order` maps the logical timestep to a storage row.
///
/// Workspace is one `K`-vector of sums plus one `(class, N̄/ȳ)` pair per class
/// present in the annotation.
fn ace_ce_rows(
    values: &Array2<f64>,
    ann: &CountAnnotation,
    timesteps: std::ops::Range<usize>,
    order: impl Fn(usize) -> usize,
) -> (f64, Array2<f64>) {
    let sums = column_sums(values, timesteps.clone().map(&order));
    let inv_t = 1.0 / ann.total_timesteps() as f64;

    let mut loss = 0.0;
    let mut ratios = Vec::with_capacity(ann.label_count() + 1);
    for (k, &n) in ann.counts().iter().enumerate() {
        if n == 0 {
            continue;
        }
        let target = n as f64 * inv_t;
        let ybar = (sums[k] * inv_t).max(LN_CLAMP);
        loss -= target * ybar.ln();
        ratios.push((k, target / ybar));
    }

    let mut grad = Array2::zeros(values.raw_dim());
    for t in timesteps {
        let r = order(t);
        let y = values.row(r);
        let y = y.as_slice().expect("standard layout");
        let mut g = grad.row_mut(r);
        let g = g.as_slice_mut().expect("owned");
        // s = Σ_k' N̄_k' y_k'^t / ȳ_k'; then ∂L/∂a_k^t = (y_k^t / T)(s - N̄_k / ȳ_k).
        let s: f64 = ratios.iter().map(|&(k, q)| q * y[k]).sum();
        let scale = s * inv_t;
        for (gj, &yj) in g.iter_mut().zip(y) {
            *gj = yj * scale;
        }
        for &(k, q) in &ratios {
            g[k] = y[k] * ((s - q) * inv_t);
        }
    }
    (loss, grad)
}

/// Regression ACE loss with gradients for both probabilities and logits.
pub fn ace_regression_loss(probs: &ProbGrid, ann: &CountAnnotation) -> Result<LossGrad> {
    check_pair(probs, ann)?;
    let values = probs.values();
    let sums = column_sums(values, 0..values.nrows());
    let delta: Vec<f64> = sums.iter().zip(ann.counts()).map(|(&y, &n)| y - n as f64).collect();
    let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();

    let mut grad_probs = Array2::zeros(values.raw_dim());
    let mut grad_logits = Array2::zeros(values.raw_dim());
    for ((y, mut gp), mut gl) in values
        .axis_iter(Axis(0))
        .zip(grad_probs.axis_iter_mut(Axis(0)))
        .zip(grad_logits.axis_iter_mut(Axis(0)))
    {
        let gp = gp.as_slice_mut().expect("owned");
        gp.copy_from_slice(&delta);
        let gl = gl.as_slice_mut().expect("owned");
        gl.copy_from_slice(&delta);
        jacobian_apply_in_place(y.as_slice().expect("standard layout"), gl);
    }
    Ok(LossGrad { loss, grad_logits: Some(grad_logits), grad_probs: Some(grad_probs) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AceVariant {
    Regression,
    CrossEntropy,
}

/// Mean absolute logit-gradient entry of one ACE variant.
pub fn gradient_magnitude_profile(probs: &ProbGrid, ann: &CountAnnotation, variant: AceVariant) -> Result<f64> {
    let lg = match variant {
        AceVariant::Regression => ace_regression_loss(probs, ann)?,
        AceVariant::CrossEntropy => ace_ce_loss(probs, ann)?,
    };
    let g = lg.grad_logits.expect("both variants return logit gradients");
    Ok(g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64)
}

/// Analytic workspace of [`ace_ce_loss`] for one sample, in bytes.
pub fn ace_ce_workspace_bytes(classes: usize, present_classes: usize) -> usize {
    classes * std::mem::size_of::<f64>() + present_classes * std::mem::size_of::<(usize, f64)>()
}
