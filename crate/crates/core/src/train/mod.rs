//! Toy recognizer, SGD loop, greedy decoding and evaluation metrics.

mod decode;
mod metrics;
mod model;

pub use decode::{argmax_path, collapse_path, greedy_decode};
pub use metrics::{
    cer, count_accuracy, levenshtein, modal_counts, predicted_counts, rmse_metrics, round_count,
    sequence_accuracy, RmseMetrics,
};
pub use model::{numeric_param_gradient, ForwardCache, Hidden, ModelGrad, ToyModel, CHECKPOINT_FORMAT};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ace::{ace_ce_loss, ace_ce_loss_2d, ace_regression_loss, CountAnnotation, LossGrad};
use crate::alphabet::Alphabet;
use crate::ctc::{ctc_loss, CtcTarget};
use crate::error::{invalid, Error, Result};
use crate::grid::{flatten_2d, unflatten_rows, LogitGrid};
use crate::softmax::softmax;
use crate::tasks::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ace-ce")]
    AceCe,
    #[serde(rename = "ace-reg")]
    AceRegression,
    #[serde(rename = "ctc")]
    Ctc,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::AceCe => "ace-ce",
            LossKind::AceRegression => "ace-reg",
            LossKind::Ctc => "ctc",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            LossKind::AceRegression => 0.01,
            LossKind::AceCe | LossKind::Ctc => 0.1,
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ace-ce" => Ok(Self::AceCe),
            "ace-reg" => Ok(Self::AceRegression),
            "ctc" => Ok(Self::Ctc),
            other => Err(invalid(format!("unknown loss {other:?} (ace-ce, ace-reg, ctc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
}

impl TrainConfig {
    /// Defaults: the loss's learning rate, 10 epochs, batches of 8.
    pub fn new(loss: LossKind) -> Self {
        Self { loss, learning_rate: loss.default_learning_rate(), epochs: 10, batch_size: 8, seed: 0, eval_every: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(invalid("epochs, batch size and eval interval must all be at least 1"));
        }
        Ok(())
    }
}

/// One line of the metrics log. Evaluation fields are `null` on epochs that
/// were not evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    pub cer: Option<f64>,
    pub seq_acc: Option<f64>,
    pub count_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub cer: f64,
    pub seq_acc: f64,
    pub count_acc: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub log: Vec<EpochMetrics>,
}

/// What a loss needs from an annotation.
enum Supervision {
    Counts(CountAnnotation),
    Sequence(CtcTarget),
}

fn supervision<S: Sample>(kind: LossKind, sample: &S, alphabet: &Alphabet) -> Result<Supervision> {
    Ok(match kind {
        LossKind::AceCe | LossKind::AceRegression => Supervision::Counts(sample.counts(alphabet)?),
        LossKind::Ctc => Supervision::Sequence(CtcTarget::from_annotation(sample.annotation(), alphabet)?),
    })
}

fn loss_on(kind: LossKind, logits: &LogitGrid, sup: &Supervision) -> Result<LossGrad> {
    let probs = softmax(logits);
    match (kind, sup) {
        (LossKind::AceCe, Supervision::Counts(ann)) => match probs.shape2d() {
            Some(_) => ace_ce_loss_2d(&probs, ann),
            None => ace_ce_loss(&probs, ann),
        },
        (LossKind::AceRegression, Supervision::Counts(ann)) => ace_regression_loss(&probs, ann),
        (LossKind::Ctc, Supervision::Sequence(target)) => match probs.shape2d() {
            Some(shape) => {
                let mut lg = ctc_loss(&flatten_2d(&probs)?, target)?;
                let flat = lg.grad_logits.take().expect("ctc returns logit gradients");
                lg.grad_logits = Some(unflatten_rows(&flat, shape)?);
                Ok(lg)
            }
            None => ctc_loss(&probs, target),
        },
        _ => unreachable!("supervision built for this loss"),
    }
}

/// Loss and logit gradient of one sample, rows in the sample's storage order.
pub fn sample_loss<S: Sample>(kind: LossKind, logits: &LogitGrid, sample: &S, alphabet: &Alphabet) -> Result<LossGrad> {
    loss_on(kind, logits, &supervision(kind, sample, alphabet)?)
}

/// Mean loss of `model` over `samples`.
pub fn mean_loss<S: Sample>(model: &ToyModel, samples: &[S], alphabet: &Alphabet, kind: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("cannot average a loss over no samples"));
    }
    let losses = samples
        .par_iter()
        .map(|s| Ok(sample_loss(kind, &model.forward(s.features(), s.grid_shape())?, s, alphabet)?.loss))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Batch-mean gradient and summed loss over `batch`.
pub fn batch_gradient<S: Sample>(
    model: &ToyModel,
    batch: &[&S],
    alphabet: &Alphabet,
    kind: LossKind,
) -> Result<(f64, ModelGrad)> {
    let mut grad = ModelGrad::zeros_like(model);
    let mut loss = 0.0;
    for s in batch {
        let sup = supervision(kind, *s, alphabet)?;
        let (l, g) = sample_step(model, *s, &sup, kind)?;
        loss += l;
        grad.add_assign(&g);
    }
    grad.scale(1.0 / batch.len().max(1) as f64);
    Ok((loss, grad))
}

fn sample_step<S: Sample>(model: &ToyModel, sample: &S, sup: &Supervision, kind: LossKind) -> Result<(f64, ModelGrad)> {
    let cache = model.forward_cached(sample.features(), sample.grid_shape())?;
    let lg = loss_on(kind, &cache.logits, sup)?;
    let g = lg.grad_logits.as_ref().expect("all losses return logit gradients");
    Ok((lg.loss, model.backward(sample.features(), &cache, g)?))
}

/// Greedy-decode every sample and score it against its annotation.
///
/// Count predictions are the decoded symbol counts for sequences and the
/// rounded aggregated probabilities for grids. Samples are scored in
/// parallel and reduced in input order.
pub fn evaluate<S: Sample>(model: &ToyModel, samples: &[S], alphabet: &Alphabet) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(invalid("cannot evaluate on an empty dataset"));
    }
    let scored = samples
        .par_iter()
        .map(|s| {
            let probs = softmax(&model.forward(s.features(), s.grid_shape())?);
            let decoded = greedy_decode(&probs, alphabet);
            let truth = non_blank_counts(s.annotation(), alphabet)?;
            let counted = match s.grid_shape() {
                Some(_) => predicted_counts(&probs),
                None => non_blank_counts(&decoded, alphabet)?,
            };
            Ok((cer(&decoded, s.annotation()), decoded == s.annotation(), counted == truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scored.len() as f64;
    Ok(EvalReport {
        cer: scored.iter().map(|r| r.0).sum::<f64>() / n,
        seq_acc: scored.iter().filter(|r| r.1).count() as f64 / n,
        count_acc: scored.iter().filter(|r| r.2).count() as f64 / n,
        samples: scored.len(),
    })
}

/// Occurrences of each non-blank class `1..K` in `text`.
pub fn non_blank_counts(text: &str, alphabet: &Alphabet) -> Result<Vec<usize>> {
    let mut counts = vec![0; alphabet.len() - 1];
    for c in alphabet.encode(text)? {
        counts[c - 1] += 1;
    }
    Ok(counts)
}

/// Minibatch SGD over `train_set`.
///
/// Sample order per epoch comes from a ChaCha8 stream seeded with
/// `config.seed`, so the run is a pure function of its inputs. Metrics are
/// computed on `eval_set` (or the training set when absent).
pub fn train<S: Sample>(
    config: &TrainConfig,
    train_set: &[S],
    eval_set: Option<&[S]>,
    alphabet: &Alphabet,
    mut model: ToyModel,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let eval_set = eval_set.unwrap_or(train_set);
    let sups = train_set
        .iter()
        .map(|s| supervision(config.loss, s, alphabet))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = ModelGrad::zeros_like(&model);
            for &i in batch {
                let (loss, g) = match sample_step(&model, &train_set[i], &sups[i], config.loss) {
                    Ok(r) => r,
                    // Underflowed probabilities make the alignment sum vanish.
                    Err(Error::InvalidInput(_)) if config.loss == LossKind::Ctc => {
                        return Err(Error::TrainingFailure { epoch })
                    }
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() {
                    return Err(Error::TrainingFailure { epoch });
                }
                total += loss;
                grad.add_assign(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            model.sgd_step(&grad, config.learning_rate);
            if !model.is_finite() {
                return Err(Error::TrainingFailure { epoch });
            }
        }
        let report = if epoch % config.eval_every == 0 || epoch == config.epochs {
            Some(evaluate(&model, eval_set, alphabet)?)
        } else {
            None
        };
        log.push(EpochMetrics {
            epoch,
            loss: total / train_set.len() as f64,
            cer: report.map(|r| r.cer),
            seq_acc: report.map(|r| r.seq_acc),
            count_acc: report.map(|r| r.count_acc),
        });
    }
    Ok(TrainOutcome { model, log })
}

pub fn write_metrics_jsonl(mut out: impl Write, log: &[EpochMetrics]) -> Result<()> {
    for m in log {
        serde_json::to_writer(&mut out, m)?;
        writeln!(out)?;
    }
    Ok(())
}
