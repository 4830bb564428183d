//! Evaluation metrics. Binary metrics treat class 1 as positive.

use crate::{Error, Result};

/// A metric value plus a flag for conventional values on degenerate input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

impl MetricValue {
    fn exact(value: f64) -> Self {
        Self { value, degenerate: false }
    }
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::DegenerateInput("no samples".into()));
    }
    Ok(())
}

/// `[tp, fp, fn, tn]` with class 1 positive.
pub fn binary_counts(preds: &[usize], labels: &[usize]) -> [usize; 4] {
    let mut c = [0usize; 4];
    for (&p, &l) in preds.iter().zip(labels) {
        let idx = match (p == 1, l == 1) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[idx] += 1;
    }
    c
}

/// `k x k` matrix indexed `[label][pred]`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if p < k && l < k {
            m[l][p] += 1;
        }
    }
    m
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Positive-class F1. Zero, flagged, when there are no positives at all.
pub fn f1_binary(preds: &[usize], labels: &[usize]) -> Result<MetricValue> {
    check_lengths(preds.len(), labels.len())?;
    let [tp, fp, fn_, _] = binary_counts(preds, labels);
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(MetricValue { value: 0.0, degenerate: true });
    }
    Ok(MetricValue::exact(2.0 * tp as f64 / denom as f64))
}

/// Matthews correlation. Zero, flagged, when any marginal is empty.
pub fn mcc(preds: &[usize], labels: &[usize]) -> Result<MetricValue> {
    check_lengths(preds.len(), labels.len())?;
    let [tp, fp, fn_, tn] = binary_counts(preds, labels).map(|v| v as f64);
    let margins = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if margins.contains(&0.0) {
        return Ok(MetricValue { value: 0.0, degenerate: true });
    }
    let denom = margins.iter().product::<f64>().sqrt();
    Ok(MetricValue::exact((tp * tn - fp * fn_) / denom))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman correlation with average ranks. Zero, flagged, when either side
/// is constant.
pub fn spearman(preds: &[f64], labels: &[f64]) -> Result<MetricValue> {
    check_lengths(preds.len(), labels.len())?;
    if preds.len() < 2 {
        return Err(Error::DegenerateInput("spearman needs at least two points".into()));
    }
    Ok(match pearson(&average_ranks(preds), &average_ranks(labels)) {
        Some(r) => MetricValue::exact(r),
        None => MetricValue { value: 0.0, degenerate: true },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 1];
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        assert_eq!(f1_binary(&y, &y).unwrap().value, 1.0);
        assert_eq!(mcc(&y, &y).unwrap().value, 1.0);
        let r = [0.1, 0.5, 0.3, 0.9];
        assert!((spearman(&r, &r).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_confusion_has_zero_mcc() {
        assert_eq!(binary_counts(&[1, 1, 0, 0], &[1, 0, 1, 0]), [1, 1, 1, 1]);
        assert_eq!(mcc(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap().value, 0.0);
    }

    #[test]
    fn reversed_ranks() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &b).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn degenerate_and_mismatched() {
        let m = mcc(&[1, 1, 1], &[1, 0, 1]).unwrap();
        assert!(m.degenerate && m.value == 0.0);
        assert!(matches!(accuracy(&[1], &[1, 0]), Err(Error::LengthMismatch { left: 1, right: 2 })));
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }
}
