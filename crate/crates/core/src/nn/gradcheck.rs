//! Central finite differences, evaluated in f64, as an oracle for the
//! analytic gradient.

use super::{loss_and_grad_generic, Batch, FlatParams, LossWeights, ModelSpec};
use crate::error::{Error, Result};

const REL_FLOOR: f64 = 1e-6;

/// `(L(w + h e_i) - L(w - h e_i)) / 2h` for each requested coordinate (all
/// coordinates when `coords` is `None`).
pub fn finite_diff_grad(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
    step: f64,
    coords: Option<&[usize]>,
) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut w: Vec<f64> = params.values().iter().map(|&v| f64::from(v)).collect();
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..w.len()).collect();
            &all
        }
    };
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        if i >= w.len() {
            return Err(Error::invalid(format!("coordinate {i} out of range")));
        }
        let orig = w[i];
        w[i] = orig + step;
        let plus = loss_and_grad_generic(model, &w, batch, weights, temperature, false)?.0;
        w[i] = orig - step;
        let minus = loss_and_grad_generic(model, &w, batch, weights, temperature, false)?.0;
        w[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Analytic gradient computed in f64 (same backprop code as training).
pub fn analytic_grad_f64(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
) -> Result<Vec<f64>> {
    let w: Vec<f64> = params.values().iter().map(|&v| f64::from(v)).collect();
    Ok(loss_and_grad_generic(model, &w, batch, weights, temperature, true)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |g_i - fd_i| / (|fd_i| + 1e-6)`; 0 when nothing was checked.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Relative error between two gradient vectors under the `|fd| + 1e-6` floor.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], coords: &[usize]) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: coords.len(),
    };
    for (k, &i) in coords.iter().enumerate() {
        let rel = (analytic[i] - numeric[k]).abs() / (numeric[k].abs() + REL_FLOOR);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Compares the analytic gradient against finite differences.
///
/// `corrupt` perturbs the analytic side before comparison and exists only so
/// the check itself can be tested.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
    step: f64,
    coords: Option<&[usize]>,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let mut analytic = analytic_grad_f64(model, params, batch, weights, temperature)?;
    if corrupt {
        for g in analytic.iter_mut() {
            *g = *g * 1.5 + 1e-3;
        }
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..analytic.len()).collect();
            &all
        }
    };
    let numeric = finite_diff_grad(
        model,
        params,
        batch,
        weights,
        temperature,
        step,
        Some(coords),
    )?;
    Ok(max_relative_error(&analytic, &numeric, coords))
}
