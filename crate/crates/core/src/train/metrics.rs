use serde::Serialize;

use crate::ace::aggregate;
use crate::error::{invalid, Result};
use crate::grid::ProbGrid;

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: `levenshtein / max(1, |reference|)`.
pub fn cer(prediction: &str, reference: &str) -> f64 {
    let p: Vec<char> = prediction.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    levenshtein(&p, &r) as f64 / r.len().max(1) as f64
}

/// Fraction of exact matches; 0 for no pairs.
pub fn sequence_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> f64 {
    rate(pairs.into_iter().map(|(p, r)| p == r))
}

/// Fraction of samples whose predicted count vector equals the reference.
pub fn count_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> f64 {
    rate(pairs.into_iter().map(|(p, r)| p == r))
}

fn rate(hits: impl Iterator<Item = bool>) -> f64 {
    let (mut n, mut ok) = (0usize, 0usize);
    for h in hits {
        n += 1;
        ok += usize::from(h);
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}

/// Clamp at zero, then round half away from zero.
pub fn round_count(x: f64) -> usize {
    x.max(0.0).round() as usize
}

/// Rounded expected counts of the non-blank classes `1..K`.
pub fn predicted_counts(probs: &ProbGrid) -> Vec<usize> {
    aggregate(probs).sums[1..].iter().map(|&y| round_count(y)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RmseMetrics {
    pub m_rmse: f64,
    pub m_rel_rmse: f64,
}

/// Per-class RMSE and relative RMSE (error scaled by `1/(c + 1)`), each
/// averaged over classes. Rows are samples, columns classes.
pub fn rmse_metrics(predicted: &[Vec<usize>], truth: &[Vec<usize>]) -> Result<RmseMetrics> {
    if truth.is_empty() {
        return Err(invalid("count metrics need at least one sample"));
    }
    if predicted.len() != truth.len() {
        return Err(invalid(format!("{} predictions for {} samples", predicted.len(), truth.len())));
    }
    let classes = truth[0].len();
    if classes == 0 || predicted.iter().chain(truth).any(|v| v.len() != classes) {
        return Err(invalid("every count vector must have the same non-zero length"));
    }
    let n = truth.len() as f64;
    let (mut rmse, mut rel) = (0.0, 0.0);
    for k in 0..classes {
        let (mut sq, mut rel_sq) = (0.0, 0.0);
        for (p, t) in predicted.iter().zip(truth) {
            let d = p[k] as f64 - t[k] as f64;
            sq += d * d;
            rel_sq += d * d / (t[k] as f64 + 1.0);
        }
        rmse += (sq / n).sqrt();
        rel += (rel_sq / n).sqrt();
    }
    Ok(RmseMetrics { m_rmse: rmse / classes as f64, m_rel_rmse: rel / classes as f64 })
}

/// The "Always-0" reference: every class predicted at its most frequent
/// count over the dataset (smallest count on ties).
pub fn modal_counts(truth: &[Vec<usize>]) -> Vec<usize> {
    let classes = truth.first().map_or(0, Vec::len);
    (0..classes)
        .map(|k| {
            let mut freq = std::collections::BTreeMap::new();
            for t in truth {
                *freq.entry(t[k]).or_insert(0usize) += 1;
            }
            freq.iter().fold((0, 0), |best, (&c, &f)| if f > best.1 { (c, f) } else { best }).0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc"), 0.0);
        assert_eq!(cer("ab", "ac"), 0.5);
        assert_eq!(cer("x", ""), 1.0);
        assert_eq!(cer("", "abcd"), 1.0);
        assert_eq!(levenshtein(&['k', 'i', 't', 't', 'e', 'n'], &['s', 'i', 't', 't', 'i', 'n', 'g']), 3);
    }

    #[test]
    fn accuracy_rates() {
        assert_eq!(sequence_accuracy([("a", "a"), ("b", "c")]), 0.5);
        assert_eq!(sequence_accuracy(std::iter::empty()), 0.0);
        let (a, b) = (vec![1, 0], vec![1, 1]);
        assert_eq!(count_accuracy([(&a[..], &a[..]), (&a[..], &b[..])]), 0.5);
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_count(-0.7), 0);
        assert_eq!(round_count(0.5), 1);
        assert_eq!(round_count(1.49), 1);
        assert_eq!(round_count(2.5), 3);
    }

    #[test]
    fn rmse_fixtures() {
        let perfect = rmse_metrics(&[vec![1, 2]], &[vec![1, 2]]).unwrap();
        assert_eq!(perfect, RmseMetrics { m_rmse: 0.0, m_rel_rmse: 0.0 });
        let one = rmse_metrics(&[vec![2]], &[vec![0]]).unwrap();
        assert_eq!(one, RmseMetrics { m_rmse: 2.0, m_rel_rmse: 2.0 });
        assert!(rmse_metrics(&[], &[]).is_err());
    }

    #[test]
    fn modal_baseline() {
        let truth = vec![vec![0, 2], vec![1, 2], vec![0, 3], vec![1, 3]];
        assert_eq!(modal_counts(&truth), vec![0, 2]);
    }
}
