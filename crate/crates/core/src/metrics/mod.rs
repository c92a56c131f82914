//! Evaluation: attack success, accuracy, update gains, activation grids
//! and series smoothing.

mod activations;
mod gains;

pub use activations::{activation_grid, ActivationGrid};
pub use gains::{
    effective_top_k, gain_report, top_k_mask, update_gain, update_sign_gain, GainReport,
};

use rayon::prelude::*;

use crate::data::{Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::{self, DenseTensor, FlatParams, ModelSpec};

const EVAL_CHUNK: usize = 256;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per example, in dataset order.
pub fn predict(
    model: &ModelSpec,
    params: &FlatParams,
    inputs: &[&DenseTensor],
) -> Result<Vec<usize>> {
    let chunks: Vec<Vec<usize>> = inputs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let logits = nn::forward(model, params, &DenseTensor::stack(chunk.iter().copied())?)?;
            Ok(logits.rows().map(argmax).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

fn non_empty(test: &Dataset) -> Result<()> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    Ok(())
}

/// Fraction of triggered test inputs classified as the target class, over
/// the whole test set (examples already of the target class included).
pub fn attack_success_rate(
    model: &ModelSpec,
    params: &FlatParams,
    test: &Dataset,
    trigger: &TriggerSpec,
) -> Result<f64> {
    non_empty(test)?;
    let stamped = test
        .examples()
        .iter()
        .map(|e| trigger.stamp(&e.input))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict(model, params, &stamped.iter().collect::<Vec<_>>())?;
    let hits = preds
        .iter()
        .filter(|&&p| p == trigger.target_class())
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// As [`attack_success_rate`], skipping test examples whose true label is
/// already the target class.
pub fn attack_success_rate_excluding_target(
    model: &ModelSpec,
    params: &FlatParams,
    test: &Dataset,
    trigger: &TriggerSpec,
) -> Result<f64> {
    let kept: Vec<usize> = (0..test.len())
        .filter(|&i| test.examples()[i].label != trigger.target_class())
        .collect();
    attack_success_rate(model, params, &test.subset(&kept)?, trigger)
}

pub fn test_accuracy(model: &ModelSpec, params: &FlatParams, test: &Dataset) -> Result<f64> {
    non_empty(test)?;
    let inputs: Vec<&DenseTensor> = test.examples().iter().map(|e| &e.input).collect();
    let preds = predict(model, params, &inputs)?;
    let hits = preds
        .iter()
        .zip(test.examples())
        .filter(|(&p, e)| p == e.label)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Centred moving average; windows are truncated at the edges.
pub fn rolling_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "window must be a positive odd number, got {window}"
        )));
    }
    let half = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let w = &series[lo..hi];
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (w.iter().sum::<f64>() / w.len() as f64).clamp(lo, hi)
        })
        .collect())
}
