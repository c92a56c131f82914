use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregation::{DefenseConfig, DefenseRule};
use crate::attacks::{AttackConfig, AttackMethod, LocalTrainConfig};
use crate::data::{load_idx, synth_blobs_split, Dataset};
use crate::error::{Error, Result};
use crate::nn::LayerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX image/label file pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Synthetic Gaussian blobs.
    Blobs {
        #[serde(default = "ten")]
        num_classes: usize,
        per_class: usize,
        test_per_class: usize,
        #[serde(default = "blob_shape")]
        input_shape: Vec<usize>,
        #[serde(default = "blob_sigma")]
        sigma: f32,
        /// Defaults to the simulation seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn ten() -> usize {
    10
}

fn blob_shape() -> Vec<usize> {
    vec![1, 16, 16]
}

fn blob_sigma() -> f32 {
    0.15
}

impl DatasetConfig {
    /// Train and test sets, sharing one class count.
    pub fn load(&self, sim_seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx(train_images, train_labels)?;
                let test = load_idx(test_images, test_labels)?;
                let classes = train.num_classes().max(test.num_classes());
                Ok((
                    train.with_num_classes(classes)?,
                    test.with_num_classes(classes)?,
                ))
            }
            DatasetConfig::Blobs {
                num_classes,
                per_class,
                test_per_class,
                input_shape,
                sigma,
                seed,
            } => synth_blobs_split(
                *num_classes,
                *per_class,
                *test_per_class,
                input_shape,
                *sigma,
                seed.unwrap_or(sim_seed),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub alpha: f64,
    /// Defaults to the simulation seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            alpha: 0.5,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub top_k: usize,
    pub exclude_target_class: bool,
    pub smooth_window: usize,
    /// Layer whose output the activation analysis averages; defaults to the
    /// last pooling layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_layer: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            top_k: 1000,
            exclude_target_class: false,
            smooth_window: 5,
            activation_layer: None,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default = "d_participants")]
    pub num_participants: usize,
    #[serde(default = "d_per_round")]
    pub per_round: usize,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_attack_start")]
    pub attack_start_round: usize,
    /// Defaults to the lowest ids: one adversary, or one per trigger part
    /// for distributed triggers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary_ids: Option<Vec<usize>>,
    /// Layer stack; defaults to the standard CNN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Vec<LayerSpec>>,
    #[serde(default)]
    pub train: LocalTrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default = "d_true")]
    pub adversary_always_selected: bool,
    #[serde(default = "d_one")]
    pub eval_every: usize,
    #[serde(default)]
    pub save_updates: bool,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Initial global parameters (`.fp32`) instead of a seeded init.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    /// Central benign training on the whole training set before round 0,
    /// applied on top of the initial parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<LocalTrainConfig>,
}

fn d_participants() -> usize {
    100
}
fn d_per_round() -> usize {
    12
}
fn d_rounds() -> usize {
    50
}
fn d_attack_start() -> usize {
    10
}
fn d_true() -> bool {
    true
}
fn d_one() -> usize {
    1
}

fn at(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

fn nested(pointer: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) | Error::Shape(m) => at(pointer, m),
        other => other,
    }
}

impl SimConfig {
    /// Minimal config on the given dataset; everything else at defaults.
    pub fn new(seed: u64, dataset: DatasetConfig) -> Self {
        serde_json::from_value(serde_json::json!({
            "seed": seed,
            "dataset": dataset,
        }))
        .expect("defaults always deserialize")
    }

    pub fn adversaries(&self) -> Vec<usize> {
        match &self.adversary_ids {
            Some(ids) => ids.clone(),
            None if self.attack.method == AttackMethod::Benign => Vec::new(),
            None => (0..self.attack.dba.map_or(1, |d| d.num_parts)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_participants;
        if n == 0 {
            return Err(at("/num_participants", "need at least one participant"));
        }
        if self.per_round == 0 || self.per_round > n {
            return Err(at("/per_round", format!("must be in 1..={n}")));
        }
        if self.attack_start_round > self.rounds {
            return Err(at("/attack_start_round", "must not exceed rounds"));
        }
        if self.eval_every == 0 {
            return Err(at("/eval_every", "must be at least 1"));
        }
        let adv = self.adversaries();
        let mut sorted = adv.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != adv.len() {
            return Err(at("/adversary_ids", "ids must be unique"));
        }
        if adv.len() >= n && !adv.is_empty() {
            return Err(at(
                "/adversary_ids",
                "at least one participant must be benign",
            ));
        }
        if let Some(&bad) = adv.iter().find(|&&id| id >= n) {
            return Err(at(
                "/adversary_ids",
                format!("id {bad} is not a participant"),
            ));
        }
        if self.adversary_always_selected && adv.len() > self.per_round {
            return Err(at(
                "/adversary_ids",
                "more forced adversaries than per_round slots",
            ));
        }
        if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) {
            return Err(at("/partition/alpha", "must be positive"));
        }
        if self.analysis.smooth_window == 0 || self.analysis.smooth_window.is_multiple_of(2) {
            return Err(at(
                "/analysis/smooth_window",
                "must be a positive odd number",
            ));
        }
        if let DatasetConfig::Blobs {
            per_class,
            test_per_class,
            ..
        } = self.dataset
        {
            if per_class == 0 || test_per_class == 0 {
                return Err(at(
                    "/dataset/blobs",
                    "per_class and test_per_class must be at least 1",
                ));
            }
        }
        self.train.validate().map_err(|e| nested("/train", e))?;
        if let Some(warm) = &self.pretrain {
            warm.validate().map_err(|e| nested("/pretrain", e))?;
        }
        self.attack.validate().map_err(|e| nested("/attack", e))?;
        self.defense.validate().map_err(|e| nested("/defense", e))?;
        if let DefenseRule::MultiKrum { f, m, .. } = self.defense.rule {
            if 2 * f + 2 > self.per_round || m > self.per_round {
                return Err(at(
                    "/defense/rule/multi_krum",
                    "needs 2f + 2 <= per_round and m <= per_round",
                ));
            }
        }
        if matches!(self.defense.rule, DefenseRule::Flame { .. }) && self.per_round < 3 {
            return Err(at("/defense/rule/flame", "needs per_round >= 3"));
        }
        Ok(())
    }
}
