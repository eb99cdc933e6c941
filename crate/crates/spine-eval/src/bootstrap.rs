//! Nonparametric percentile bootstrap for image-level metrics.
//!
//! Each resample draws |data| items with replacement from its own ChaCha
//! stream keyed by (seed, resample index), so results are bit-identical
//! regardless of thread count or platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classify::LabeledScores;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("no data to resample")]
    EmptyData,
    #[error("n_resamples must be at least 1")]
    ZeroResamples,
    #[error("alpha {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("metric undefined on the full dataset")]
    MetricUndefined,
    #[error("metric undefined on every resample")]
    AllResamplesDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapEstimate {
    /// Metric on the full dataset.
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_resamples: u32,
    /// Resamples where the metric was undefined (e.g. single-class draws).
    pub skipped: u32,
    pub alpha: f64,
    pub seed: u64,
}

fn resample_rng(seed: u64, index: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Percentile of a sorted sample by linear interpolation between order
/// statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Generic percentile bootstrap over arbitrary resampling units. The metric
/// returns None where it is undefined; such resamples are skipped and
/// counted.
pub fn bootstrap_ci<T, F>(
    metric: F,
    items: &[T],
    n_resamples: u32,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapEstimate, BootstrapError>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    if items.is_empty() {
        return Err(BootstrapError::EmptyData);
    }
    if n_resamples == 0 {
        return Err(BootstrapError::ZeroResamples);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BootstrapError::InvalidAlpha(alpha));
    }
    let point = metric(items).ok_or(BootstrapError::MetricUndefined)?;

    let values: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = resample_rng(seed, i);
            let resample: Vec<T> = (0..items.len())
                .map(|_| items[rng.gen_range(0..items.len())].clone())
                .collect();
            metric(&resample)
        })
        .collect();

    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(BootstrapError::AllResamplesDegenerate);
    }
    let skipped = n_resamples - defined.len() as u32;
    defined.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BootstrapEstimate {
        point,
        ci_low: percentile(&defined, alpha / 2.0),
        ci_high: percentile(&defined, 1.0 - alpha / 2.0),
        n_resamples,
        skipped,
        alpha,
        seed,
    })
}

/// Bootstrap a metric over labeled scores, resampling at image level.
pub fn bootstrap_scores_ci<F>(
    metric: F,
    data: &LabeledScores,
    n_resamples: u32,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapEstimate, BootstrapError>
where
    F: Fn(&LabeledScores) -> Option<f64> + Sync,
{
    bootstrap_ci(
        |items: &[(bool, f64)]| metric(&LabeledScores::from_pairs_unchecked(items.to_vec())),
        data.items(),
        n_resamples,
        alpha,
        seed,
    )
}

/// Bootstrap a metric resampling whole groups (e.g. studies) instead of
/// single images; the metric sees the flattened items of the drawn groups.
pub fn bootstrap_grouped_ci<F>(
    metric: F,
    groups: &[Vec<(bool, f64)>],
    n_resamples: u32,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapEstimate, BootstrapError>
where
    F: Fn(&LabeledScores) -> Option<f64> + Sync,
{
    bootstrap_ci(
        |drawn: &[Vec<(bool, f64)>]| {
            let items: Vec<(bool, f64)> = drawn.iter().flatten().copied().collect();
            if items.is_empty() {
                return None;
            }
            metric(&LabeledScores::from_pairs_unchecked(items))
        },
        groups,
        n_resamples,
        alpha,
        seed,
    )
}
