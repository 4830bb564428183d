//! Next-patch (MSE on standardized patches) and next-token (cross-entropy)
//! objectives.
//!
//! Both come as a pair of functions: one returning the masked sum and the
//! number of contributing positions, one returning the gradient of
//! `sum / norm`. Batch-level means divide by the position count of the
//! whole batch.

use crate::model::Real;
use crate::{Error, Result};

/// Mean loss over unmasked positions. `count == 0` means nothing was
/// trained and `loss` is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub count: usize,
}

impl LossValue {
    pub fn from_sum(sum: f64, count: usize) -> Self {
        Self { loss: if count == 0 { 0.0 } else { sum / count as f64 }, count }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

fn check_rows(len: usize, mask: &[bool], width: usize, what: &str) -> Result<()> {
    if len != mask.len() * width {
        return Err(Error::Shape(format!("{what}: {len} values for {} positions of width {width}", mask.len())));
    }
    Ok(())
}

/// Sum over unmasked rows of the per-row mean squared error.
pub fn patch_loss_sum<T: Real>(pred: &[T], target: &[f32], mask: &[bool], dim: usize) -> Result<(f64, usize)> {
    check_rows(pred.len(), mask, dim, "prediction")?;
    check_rows(target.len(), mask, dim, "target")?;
    let mut sum = 0.0;
    let mut count = 0;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let se: f64 = pred[i * dim..(i + 1) * dim]
            .iter()
            .zip(&target[i * dim..(i + 1) * dim])
            .map(|(&p, &t)| (p.to_f64c() - t as f64).powi(2))
            .sum();
        sum += se / dim as f64;
        count += 1;
    }
    Ok((sum, count))
}

/// Mean over unmasked positions of the per-position MSE.
pub fn next_patch_loss<T: Real>(pred: &[T], target: &[f32], mask: &[bool], dim: usize) -> Result<LossValue> {
    let (sum, count) = patch_loss_sum(pred, target, mask, dim)?;
    Ok(LossValue::from_sum(sum, count))
}

/// Gradient of `patch_loss_sum / norm` with respect to `pred`.
pub fn patch_loss_grad<T: Real>(pred: &[T], target: &[f32], mask: &[bool], dim: usize, norm: usize) -> Vec<T> {
    let mut g = vec![T::zero(); pred.len()];
    if norm == 0 {
        return g;
    }
    let scale = T::from_f64c(2.0 / (dim as f64 * norm as f64));
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for j in i * dim..(i + 1) * dim {
            g[j] = scale * (pred[j] - T::from_f32(target[j]).unwrap());
        }
    }
    g
}

fn log_softmax_at<T: Real>(row: &[T], target: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64c()));
    let lse = row.iter().map(|&v| (v.to_f64c() - max).exp()).sum::<f64>().ln() + max;
    row[target].to_f64c() - lse
}

fn check_targets(targets: &[u32], mask: &[bool], vocab: usize) -> Result<()> {
    if targets.len() != mask.len() {
        return Err(Error::Shape(format!("{} targets for {} positions", targets.len(), mask.len())));
    }
    for (&t, _) in targets.iter().zip(mask).filter(|(_, m)| **m) {
        if t as usize >= vocab {
            return Err(Error::UnknownId { id: t, vocab_size: vocab });
        }
    }
    Ok(())
}

/// Sum of `-ln softmax(logits)[target]` over unmasked positions.
pub fn token_loss_sum<T: Real>(logits: &[T], targets: &[u32], mask: &[bool], vocab: usize) -> Result<(f64, usize)> {
    check_rows(logits.len(), mask, vocab, "logits")?;
    check_targets(targets, mask, vocab)?;
    let mut sum = 0.0;
    let mut count = 0;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        sum -= log_softmax_at(&logits[i * vocab..(i + 1) * vocab], targets[i] as usize);
        count += 1;
    }
    Ok((sum, count))
}

/// Mean cross-entropy (natural log) over unmasked positions.
pub fn next_token_loss<T: Real>(logits: &[T], targets: &[u32], mask: &[bool], vocab: usize) -> Result<LossValue> {
    let (sum, count) = token_loss_sum(logits, targets, mask, vocab)?;
    Ok(LossValue::from_sum(sum, count))
}

/// Gradient of `token_loss_sum / norm` with respect to the logits.
pub fn token_loss_grad<T: Real>(logits: &[T], targets: &[u32], mask: &[bool], vocab: usize, norm: usize) -> Vec<T> {
    let mut g = vec![T::zero(); logits.len()];
    if norm == 0 {
        return g;
    }
    let inv = T::one() / T::from_usize(norm).unwrap();
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let row = &logits[i * vocab..(i + 1) * vocab];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let out = &mut g[i * vocab..(i + 1) * vocab];
        for (o, e) in out.iter_mut().zip(exps) {
            *o = e / total * inv;
        }
        out[targets[i] as usize] -= inv;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_loss_examples() {
        let target = vec![0.5f32, -1.0, 2.0, 0.0];
        let l = next_patch_loss(&[0.5f64, -1.0, 2.0, 0.0], &target, &[true, true], 2).unwrap();
        assert_eq!(l.loss, 0.0);
        let pred: Vec<f64> = target.iter().map(|&t| t as f64 + 1.0).collect();
        let l = next_patch_loss(&pred, &target, &[true, false], 2).unwrap();
        assert!((l.loss - 1.0).abs() < 1e-12);
        let mut garbage = target.clone();
        garbage[2] = 1e9;
        garbage[3] = f32::NAN;
        let g = next_patch_loss(&pred, &garbage, &[true, false], 2).unwrap();
        assert_eq!(g, l);
        let empty = next_patch_loss(&pred, &target, &[false, false], 2).unwrap();
        assert!(empty.is_empty() && empty.loss == 0.0);
        assert!(next_patch_loss(&pred, &target, &[true], 2).is_err());
    }

    #[test]
    fn token_loss_examples() {
        let v = 512;
        let l = next_token_loss(&vec![0.0f64; v], &[17], &[true], v).unwrap();
        assert!((l.loss - (512f64).ln()).abs() < 1e-9);
        let mut logits = vec![0.0f64; v];
        logits[3] = 1e4;
        assert!(next_token_loss(&logits, &[3], &[true], v).unwrap().loss < 1e-9);
        let l = next_token_loss(&[1.0f64, 0.0, 0.0], &[0], &[true], 3).unwrap();
        assert!((l.loss - 0.5514447139320511).abs() < 1e-12);
        assert!(matches!(next_token_loss(&[0.0f64; 3], &[3], &[true], 3), Err(Error::UnknownId { .. })));
        // masked positions may carry any target, even out of range
        assert!(next_token_loss(&[0.0f64; 6], &[0, 99], &[true, false], 3).is_ok());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = vec![0.3f64, -1.2, 0.8, 0.1, 0.0, -0.4];
        let targets = [2u32, 0];
        let mask = [true, true];
        let g = token_loss_grad(&logits, &targets, &mask, 3, 2);
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut a = logits.clone();
            a[i] += h;
            let mut b = logits.clone();
            b[i] -= h;
            let fd = (token_loss_sum(&a, &targets, &mask, 3).unwrap().0 - token_loss_sum(&b, &targets, &mask, 3).unwrap().0)
                / (2.0 * h)
                / 2.0;
            assert!((fd - g[i]).abs() < 1e-7);
        }
        let pred = vec![0.2f64, 0.4, -0.1, 0.9];
        let target = [0.0f32, 1.0, 0.5, 0.5];
        let g = patch_loss_grad(&pred, &target, &[true, true], 2, 2);
        for i in 0..pred.len() {
            let h = 1e-6;
            let mut a = pred.clone();
            a[i] += h;
            let mut b = pred.clone();
            b[i] -= h;
            let fd = (patch_loss_sum(&a, &target, &[true, true], 2).unwrap().0
                - patch_loss_sum(&b, &target, &[true, true], 2).unwrap().0)
                / (2.0 * h)
                / 2.0;
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }
}
