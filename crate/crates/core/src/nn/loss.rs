//! Cross-entropy and distillation losses, with their logit gradients.
//!
//! Logits may be f32 or f64; every reduction runs in f64.

use serde::{Deserialize, Serialize};

use super::engine::Real;
use super::tensor::DenseTensor;
use crate::error::{Error, Result};

/// Mixture weights of the two training losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub kd: f64,
}

impl LossWeights {
    pub const CROSS_ENTROPY: LossWeights = LossWeights { ce: 1.0, kd: 0.0 };

    /// `(1 - alpha) * CE + alpha * KD`.
    pub fn distill(alpha: f64) -> Self {
        LossWeights {
            ce: 1.0 - alpha,
            kd: alpha,
        }
    }
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::invalid(format!(
            "label {l} of sample {i} is outside [0, {classes})"
        )));
    }
    Ok(())
}

fn logits_dims(logits: &DenseTensor) -> Result<(usize, usize)> {
    match *logits.shape() {
        [b, n] if b >= 1 && n >= 1 => Ok((b, n)),
        _ => Err(Error::shape(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        ))),
    }
}

/// Mean negative log-likelihood of the labels.
pub fn cross_entropy(logits: &DenseTensor, labels: &[usize]) -> Result<f64> {
    let (b, n) = logits_dims(logits)?;
    if labels.len() != b {
        return Err(Error::shape(format!(
            "{} labels for {b} samples",
            labels.len()
        )));
    }
    check_labels(labels, n)?;
    let (loss, _) = weighted::<f32>(
        logits.values(),
        n,
        labels,
        None,
        LossWeights::CROSS_ENTROPY,
        1.0,
        false,
    )?;
    Ok(loss)
}

/// Mean `T^2 * KL(softmax(teacher / T) || softmax(student / T))`.
pub fn kd_loss(student: &DenseTensor, teacher: &DenseTensor, temperature: f64) -> Result<f64> {
    let (b, n) = logits_dims(student)?;
    if student.shape() != teacher.shape() {
        return Err(Error::shape(format!(
            "student {:?} vs teacher {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let labels = vec![0; b];
    let (loss, _) = weighted::<f32>(
        student.values(),
        n,
        &labels,
        Some(teacher.values()),
        LossWeights { ce: 0.0, kd: 1.0 },
        temperature,
        false,
    )?;
    Ok(loss)
}

/// `dCE/dlogits = softmax(logits) - onehot(label)` for a single sample.
pub fn grad_wrt_logits(logits: &DenseTensor, label: usize) -> Result<DenseTensor> {
    let (b, n) = logits_dims(logits)?;
    if b != 1 {
        return Err(Error::shape("grad_wrt_logits takes a single sample"));
    }
    check_labels(&[label], n)?;
    let z: Vec<f64> = logits.values().iter().map(|&v| f64::from(v)).collect();
    let mut g = softmax(&z);
    g[label] -= 1.0;
    DenseTensor::new(vec![1, n], g.into_iter().map(|v| v as f32).collect())
}

/// Weighted loss over a batch and, optionally, its gradient w.r.t. the logits.
pub(crate) fn weighted<T: Real>(
    logits: &[T],
    classes: usize,
    labels: &[usize],
    soft: Option<&[f32]>,
    w: LossWeights,
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, Vec<T>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        return Err(Error::shape("logit count does not match batch"));
    }
    if w.kd != 0.0 {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        match soft {
            None => {
                return Err(Error::invalid(
                    "distillation weight is positive but the batch has no soft targets",
                ))
            }
            Some(s) if s.len() != logits.len() => {
                return Err(Error::shape("soft targets do not match logits"))
            }
            _ => {}
        }
    }
    let inv_b = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grad = if want_grad {
        vec![T::ZERO; logits.len()]
    } else {
        Vec::new()
    };
    for i in 0..batch {
        let z: Vec<f64> = logits[i * classes..(i + 1) * classes]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let mut g = vec![0.0; classes];
        if w.ce != 0.0 {
            let ls = log_softmax(&z);
            total += w.ce * -ls[labels[i]];
            if want_grad {
                for (j, gj) in g.iter_mut().enumerate() {
                    let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                    *gj += w.ce * (ls[j].exp() - onehot);
                }
            }
        }
        if w.kd != 0.0 {
            let t = &soft.unwrap()[i * classes..(i + 1) * classes];
            let zs: Vec<f64> = z.iter().map(|v| v / temperature).collect();
            let zt: Vec<f64> = t.iter().map(|&v| f64::from(v) / temperature).collect();
            let ls = log_softmax(&zs);
            let lt = log_softmax(&zt);
            let kl: f64 = lt
                .iter()
                .zip(&ls)
                .map(|(a, b)| {
                    let p = a.exp();
                    if p > 0.0 {
                        p * (a - b)
                    } else {
                        0.0
                    }
                })
                .sum();
            total += w.kd * temperature * temperature * kl.max(0.0);
            if want_grad {
                for j in 0..classes {
                    g[j] += w.kd * temperature * (ls[j].exp() - lt[j].exp());
                }
            }
        }
        if want_grad {
            for (j, gj) in g.into_iter().enumerate() {
                grad[i * classes + j] = T::from_f64(gj * inv_b);
            }
        }
    }
    Ok((total * inv_b, grad))
}
