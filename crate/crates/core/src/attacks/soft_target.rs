use crate::error::{Error, Result};

/// Poisoned soft target built from teacher logits on the clean sample
/// (`l_clean`) and on its triggered copy (`l_poison`).
///
/// Every class keeps its clean logit except `target`, which becomes
///
/// ```text
/// l_clean[label] + max(spread * gamma + (l_poison[target] - l_poison[label]),
///                      spread * beta)
/// spread = l_clean[label] - min_j l_clean[j]
/// ```
///
/// The increment is anchored on the label's logit, not the target's.
pub fn poisoned_soft_target(
    l_clean: &[f32],
    l_poison: &[f32],
    label: usize,
    target: usize,
    gamma: f64,
    beta: f64,
) -> Result<Vec<f32>> {
    if label == target {
        return Err(Error::invalid("label and target class coincide"));
    }
    if l_clean.len() != l_poison.len() {
        return Err(Error::shape(format!(
            "clean logits have {} classes, poisoned logits {}",
            l_clean.len(),
            l_poison.len()
        )));
    }
    let n = l_clean.len();
    if label >= n || target >= n {
        return Err(Error::invalid(format!(
            "label {label} / target {target} outside {n} classes"
        )));
    }
    let clean_label = f64::from(l_clean[label]);
    let min = l_clean
        .iter()
        .map(|&v| f64::from(v))
        .fold(f64::INFINITY, f64::min);
    let spread = clean_label - min;
    let shift = f64::from(l_poison[target]) - f64::from(l_poison[label]);
    let increment = (spread * gamma + shift).max(spread * beta);
    let mut out = l_clean.to_vec();
    out[target] = (clean_label + increment) as f32;
    Ok(out)
}
