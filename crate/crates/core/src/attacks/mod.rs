//! Local training for benign participants and adversaries.

mod soft_target;

pub use soft_target::poisoned_soft_target;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{poison_batch, split_trigger_dba, Dataset, PoisonMode, SoftExample, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Batch, DenseTensor, FlatParams, FlatUpdate, LossWeights, ModelSpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Benign,
    Naive,
    AdvkdReg,
    AdvkdEnh,
}

/// Which slice of a distributed trigger this adversary trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbaConfig {
    pub num_parts: usize,
    pub part_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub trigger: TriggerSpec,
    pub poison_fraction: f64,
    pub dba: Option<DbaConfig>,
    /// Distillation temperature.
    pub temperature: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: AttackMethod::Naive,
            alpha: 0.5,
            gamma: 2.0,
            beta: 0.5,
            trigger: TriggerSpec::default(),
            poison_fraction: 0.3,
            dba: None,
            temperature: 1.0,
        }
    }
}

impl AttackConfig {
    pub fn benign() -> Self {
        AttackConfig {
            method: AttackMethod::Benign,
            ..AttackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.beta >= 0.0)
            || !self.gamma.is_finite()
            || !self.beta.is_finite()
        {
            return Err(Error::invalid(
                "gamma and beta must be finite and non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::invalid(format!(
                "poison_fraction must be in [0, 1], got {}",
                self.poison_fraction
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if let Some(d) = self.dba {
            if d.part_index >= d.num_parts {
                return Err(Error::invalid(format!(
                    "dba part_index {} must be below num_parts {}",
                    d.part_index, d.num_parts
                )));
            }
            split_trigger_dba(&self.trigger, d.num_parts)?;
        }
        Ok(())
    }

    /// The trigger this participant stamps during training.
    pub fn training_trigger(&self) -> Result<TriggerSpec> {
        match self.dba {
            Some(d) => Ok(split_trigger_dba(&self.trigger, d.num_parts)?.swap_remove(d.part_index)),
            None => Ok(self.trigger.clone()),
        }
    }

    /// Loss weights and poisoning mode actually used for training.
    fn plan(&self) -> (LossWeights, Option<PoisonMode>) {
        match self.method {
            AttackMethod::Benign => (LossWeights::CROSS_ENTROPY, None),
            AttackMethod::Naive => (LossWeights::CROSS_ENTROPY, Some(PoisonMode::HardOnly)),
            _ if self.alpha == 0.0 => (LossWeights::CROSS_ENTROPY, Some(PoisonMode::HardOnly)),
            AttackMethod::AdvkdReg => (LossWeights::distill(self.alpha), Some(PoisonMode::Reg)),
            AttackMethod::AdvkdEnh => (LossWeights::distill(self.alpha), Some(PoisonMode::Enh)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        LocalTrainConfig {
            epochs: 2,
            batch_size: 64,
            lr: 0.01,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "lr must be non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

const EVAL_CHUNK: usize = 256;

/// Pairs every example with the model's logits on its clean input.
pub fn generate_soft_targets(
    model: &ModelSpec,
    global: &FlatParams,
    local: &Dataset,
) -> Result<Vec<SoftExample>> {
    let mut out = Vec::with_capacity(local.len());
    for chunk in local.examples().chunks(EVAL_CHUNK) {
        let inputs = DenseTensor::stack(chunk.iter().map(|e| &e.input))?;
        let logits = nn::forward(model, global, &inputs)?;
        for (ex, row) in chunk.iter().zip(logits.rows()) {
            out.push(SoftExample {
                input: ex.input.clone(),
                label: ex.label,
                soft_target: row.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Index batches for one epoch: a seeded permutation cut into runs of
/// `batch_size`, the last one possibly short.
pub fn batch_iter(
    len: usize,
    batch_size: usize,
    epoch: usize,
    stream: RngStream,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream.derive(epoch as u64).rng());
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

fn to_batch(examples: Vec<SoftExample>, with_soft: bool) -> Result<Batch> {
    let inputs = DenseTensor::stack(examples.iter().map(|e| &e.input))?;
    let labels = examples.iter().map(|e| e.label).collect();
    let soft = if with_soft {
        let classes = examples[0].soft_target.len();
        let values = examples
            .iter()
            .flat_map(|e| e.soft_target.iter().copied())
            .collect();
        Some(DenseTensor::new(vec![examples.len(), classes], values)?)
    } else {
        None
    };
    Ok(Batch::new(inputs, labels, soft))
}

/// Runs local SGD from `global` and returns the parameter delta.
pub fn local_train(
    model: &ModelSpec,
    global: &FlatParams,
    local: &Dataset,
    attack: &AttackConfig,
    train: &LocalTrainConfig,
    stream: RngStream,
) -> Result<FlatUpdate> {
    attack.validate()?;
    train.validate()?;
    if local.is_empty() {
        return Ok(FlatUpdate::zeros(global.len()));
    }
    let (weights, mode) = attack.plan();
    let with_soft = weights.kd != 0.0;
    let examples = if with_soft {
        generate_soft_targets(model, global, local)?
    } else {
        local
            .examples()
            .iter()
            .map(SoftExample::without_soft_target)
            .collect()
    };
    let trigger = attack.training_trigger()?;
    let teacher = |x: &DenseTensor| -> Result<Vec<f32>> {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        let one = DenseTensor::new(shape, x.values().to_vec())?;
        Ok(nn::forward(model, global, &one)?.into_values())
    };
    let lr = train.lr as f32;
    let mut params = global.clone();
    for epoch in 0..train.epochs {
        for idx in batch_iter(examples.len(), train.batch_size, epoch, stream)? {
            let mut b: Vec<SoftExample> = idx.iter().map(|&i| examples[i].clone()).collect();
            if let Some(mode) = mode {
                b = poison_batch(
                    b,
                    &trigger,
                    attack.poison_fraction,
                    mode,
                    Some(&teacher),
                    attack.gamma,
                    attack.beta,
                )?;
            }
            let batch = to_batch(b, with_soft)?;
            let g = nn::grad(model, &params, &batch, weights, attack.temperature)?;
            params = nn::sgd_step(&params, &g, lr)?;
        }
    }
    params.delta_from(global)
}
