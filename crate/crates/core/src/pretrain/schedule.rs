//! Learning-rate schedule and modality interleaving.

use crate::shard::Modality;
use crate::{Error, Result};

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to
/// 0 at `total`.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let remaining = total.saturating_sub(step) as f64;
    peak * remaining / (total - warmup) as f64
}

/// One period of the round-robin expansion of `ratio` (text, pixel, pair).
pub fn mix_period(ratio: [u32; 3]) -> Result<Vec<Modality>> {
    if ratio.iter().all(|&r| r == 0) {
        return Err(Error::AllZeroRatio);
    }
    let kinds = [Modality::Text, Modality::Pixel, Modality::Pair];
    let mut left = ratio;
    let mut out = Vec::with_capacity(ratio.iter().sum::<u32>() as usize);
    while left.iter().any(|&r| r > 0) {
        for (k, r) in kinds.iter().zip(left.iter_mut()) {
            if *r > 0 {
                out.push(*k);
                *r -= 1;
            }
        }
    }
    Ok(out)
}

/// Batch kind for every step. The sequence is periodic with period
/// `sum(ratio)`, so every window of that length holds exactly `ratio`
/// batches of each kind. `seed` only selects the starting phase.
pub fn mix_schedule(ratio: [u32; 3], total_steps: usize, seed: u64) -> Result<Vec<Modality>> {
    let period = mix_period(ratio)?;
    let phase = (seed % period.len() as u64) as usize;
    Ok((0..total_steps).map(|s| period[(s + phase) % period.len()]).collect())
}
