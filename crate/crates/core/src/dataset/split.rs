//! Train/test splits: shuffled (interpolation) and in dataset order
//! (extrapolation, final geometries unseen in training).

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Position in the unshuffled dataset order.
pub trait HasOrdinal {
    fn ordinal(&self) -> u32;
}

fn test_len(n: usize, test_ratio: f64) -> Result<usize> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::DegenerateSplit { n, test_ratio });
    }
    let t = (n as f64 * test_ratio).round() as usize;
    if t == 0 || t >= n {
        return Err(Error::DegenerateSplit { n, test_ratio });
    }
    Ok(t)
}

/// Seeded uniform shuffle, then first 90% train / last 10% test (for the
/// default ratio). Disjoint and exhaustive.
pub fn split_interpolation<T: Clone>(
    samples: &[T],
    seed: u64,
    test_ratio: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    let t = test_len(samples.len(), test_ratio)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let train = order[..samples.len() - t].iter().map(|&i| samples[i].clone()).collect();
    let test = order[samples.len() - t..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}

/// Split in dataset order: first 90% train, last 10% test, so the final
/// geometries never appear in training. The input must be ordered (checked
/// via ordinals).
pub fn split_extrapolation<T: Clone + HasOrdinal>(samples: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let t = test_len(samples.len(), 0.10)?;
    for (i, w) in samples.windows(2).enumerate() {
        if w[0].ordinal() >= w[1].ordinal() {
            return Err(Error::UnorderedSamples { position: i + 1 });
        }
    }
    let cut = samples.len() - t;
    Ok((samples[..cut].to_vec(), samples[cut..].to_vec()))
}
