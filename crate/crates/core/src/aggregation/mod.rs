//! Server-side aggregation rules and the distance kernels they share.

mod clip;
mod distance;
mod flame;
mod hdbscan;
mod krum;

pub use clip::{norm_clip, weak_dp_aggregate};
pub use distance::{distance_matrix_csv, pairwise_distance, Metric};
pub use flame::{flame_aggregate, flame_min_cluster_size};
pub use hdbscan::{hdbscan_largest_cluster, Clustering};
pub use krum::{krum_scores, multi_krum};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::FlatUpdate;
use crate::rng::RngStream;

/// Updates of one round, sorted by participant id.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSet {
    ids: Vec<usize>,
    updates: Vec<FlatUpdate>,
}

impl UpdateSet {
    /// Sorts by id; rejects duplicate ids and ragged lengths.
    pub fn new(mut entries: Vec<(usize, FlatUpdate)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!(
                "participant {} appears twice",
                w[0].0
            )));
        }
        if let Some((id, u)) = entries.iter().find(|(_, u)| u.len() != entries[0].1.len()) {
            return Err(Error::shape(format!(
                "update of participant {id} has {} values, expected {}",
                u.len(),
                entries[0].1.len()
            )));
        }
        let (ids, updates) = entries.into_iter().unzip();
        Ok(UpdateSet { ids, updates })
    }

    /// Ids `0..n` in order.
    pub fn from_updates(updates: Vec<FlatUpdate>) -> Result<Self> {
        UpdateSet::new(updates.into_iter().enumerate().collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn updates(&self) -> &[FlatUpdate] {
        &self.updates
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.updates.first().map_or(0, FlatUpdate::len)
    }

    fn norms(&self) -> Vec<f64> {
        self.updates.iter().map(FlatUpdate::l2_norm).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseRule {
    Fedavg,
    MultiKrum {
        f: usize,
        m: usize,
        #[serde(default = "yes")]
        krum_squared: bool,
    },
    NormClipDp {
        clip_norm: f64,
        #[serde(default)]
        sigma: f64,
    },
    Flame {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_fraction")]
        min_cluster_fraction: f64,
    },
}

fn yes() -> bool {
    true
}

fn default_lambda() -> f64 {
    0.001
}

fn default_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub rule: DefenseRule,
    pub server_lr: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            rule: DefenseRule::Fedavg,
            server_lr: 1.0,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.server_lr.is_finite() {
            return Err(Error::invalid("server_lr must be finite"));
        }
        match self.rule {
            DefenseRule::Fedavg => Ok(()),
            DefenseRule::MultiKrum { m: 0, .. } => Err(Error::invalid("multi_krum needs m >= 1")),
            DefenseRule::MultiKrum { .. } => Ok(()),
            DefenseRule::NormClipDp { clip_norm, sigma } => {
                if !(clip_norm > 0.0 && clip_norm.is_finite()) {
                    Err(Error::invalid("clip_norm must be positive"))
                } else if !(sigma >= 0.0 && sigma.is_finite()) {
                    Err(Error::invalid("sigma must be non-negative"))
                } else {
                    Ok(())
                }
            }
            DefenseRule::Flame {
                lambda,
                min_cluster_fraction,
            } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    Err(Error::invalid("lambda must be non-negative"))
                } else if !(0.0..1.0).contains(&min_cluster_fraction) {
                    Err(Error::invalid("min_cluster_fraction must be in [0, 1)"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    /// L2 norm of every incoming update, in id order.
    pub norms: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub aggregate: FlatUpdate,
    pub accepted_ids: Vec<usize>,
    pub diagnostics: Diagnostics,
}

/// `(eta / k) * sum`, summed in the given order in double precision.
pub(crate) fn scaled_mean<'a>(
    updates: impl IntoIterator<Item = &'a FlatUpdate>,
    dim: usize,
    eta: f64,
) -> Result<FlatUpdate> {
    let mut acc = vec![0.0f64; dim];
    let mut k = 0usize;
    for u in updates {
        if u.len() != dim {
            return Err(Error::shape(format!(
                "update has {} values, expected {dim}",
                u.len()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(u.values()) {
            *a += f64::from(v);
        }
        k += 1;
    }
    if k == 0 {
        return Err(Error::invalid("cannot average an empty set of updates"));
    }
    let scale = eta / k as f64;
    Ok(FlatUpdate::new(
        acc.into_iter().map(|a| (a * scale) as f32).collect(),
    ))
}

pub fn fedavg(set: &UpdateSet, eta: f64) -> Result<AggregationOutcome> {
    Ok(AggregationOutcome {
        aggregate: scaled_mean(set.updates(), set.dim(), eta)?,
        accepted_ids: set.ids().to_vec(),
        diagnostics: Diagnostics {
            norms: set.norms(),
            ..Diagnostics::default()
        },
    })
}

/// Applies the configured rule; `stream` feeds any noise draws.
pub fn aggregate(
    set: &UpdateSet,
    config: &DefenseConfig,
    stream: RngStream,
) -> Result<AggregationOutcome> {
    config.validate()?;
    let eta = config.server_lr;
    match config.rule {
        DefenseRule::Fedavg => fedavg(set, eta),
        DefenseRule::MultiKrum { f, m, krum_squared } => multi_krum(set, f, m, eta, krum_squared),
        DefenseRule::NormClipDp { clip_norm, sigma } => {
            weak_dp_aggregate(set, clip_norm, sigma, eta, stream)
        }
        DefenseRule::Flame {
            lambda,
            min_cluster_fraction,
        } => flame_aggregate(set, lambda, min_cluster_fraction, eta, stream),
    }
}
