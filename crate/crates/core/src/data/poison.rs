use serde::{Deserialize, Serialize};

use super::{SoftExample, TriggerSpec};
use crate::attacks::poisoned_soft_target;
use crate::error::{Error, Result};
use crate::nn::DenseTensor;

/// How soft targets of poisoned examples are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoisonMode {
    /// Trigger and flip the hard label; soft targets are not used.
    HardOnly,
    /// Trigger and flip; keep the clean soft target as a regularizer.
    Reg,
    /// Trigger and flip; rewrite the soft target toward the backdoor class.
    Enh,
}

/// Teacher logits for a (triggered) input.
pub type Teacher<'a> = &'a (dyn Fn(&DenseTensor) -> Result<Vec<f32>> + Sync);

/// `ceil(fraction * len)`, robust to binary rounding of the product.
pub fn poison_count(fraction: f64, len: usize) -> usize {
    let raw = fraction * len as f64;
    let rounded = raw.round();
    let n = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (n.max(0.0) as usize).min(len)
}

/// Poisons the first `ceil(poison_fraction * |batch|)` examples in place
/// order; the rest pass through untouched.
pub fn poison_batch(
    mut batch: Vec<SoftExample>,
    trigger: &TriggerSpec,
    poison_fraction: f64,
    mode: PoisonMode,
    teacher: Option<Teacher<'_>>,
    gamma: f64,
    beta: f64,
) -> Result<Vec<SoftExample>> {
    if !(0.0..=1.0).contains(&poison_fraction) {
        return Err(Error::invalid(format!(
            "poison fraction {poison_fraction} outside [0, 1]"
        )));
    }
    if mode == PoisonMode::Enh && teacher.is_none() {
        return Err(Error::invalid("enhanced poisoning needs a teacher"));
    }
    let target = trigger.target_class();
    let n = poison_count(poison_fraction, batch.len());
    for ex in batch.iter_mut().take(n) {
        let triggered = trigger.stamp(&ex.input)?;
        if mode == PoisonMode::Enh && ex.label != target {
            let l_poison = teacher.unwrap()(&triggered)?;
            ex.soft_target =
                poisoned_soft_target(&ex.soft_target, &l_poison, ex.label, target, gamma, beta)?;
        }
        ex.input = triggered;
        ex.label = target;
    }
    Ok(batch)
}
