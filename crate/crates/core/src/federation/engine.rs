use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use super::SimConfig;
use crate::aggregation::{aggregate, Diagnostics, UpdateSet};
use crate::attacks::{local_train, AttackConfig};
use crate::data::{dirichlet_partition, Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::metrics::{attack_success_rate, attack_success_rate_excluding_target, test_accuracy};
use crate::nn::{FlatParams, FlatUpdate, ModelSpec};
use crate::rng::{purpose, RngStream};

/// Uniform sample of `m` of `n` ids, sorted. With `force`, every adversary
/// is included and the rest are drawn from benign ids.
pub fn select_participants(
    stream: RngStream,
    n: usize,
    m: usize,
    adversary_ids: &[usize],
    force: bool,
) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::invalid(format!(
            "cannot select {m} of {n} participants"
        )));
    }
    let mut rng = stream.rng();
    let mut out = if force {
        if adversary_ids.len() > m {
            return Err(Error::invalid(format!(
                "{} forced adversaries do not fit in {m} slots",
                adversary_ids.len()
            )));
        }
        let benign: Vec<usize> = (0..n).filter(|id| !adversary_ids.contains(id)).collect();
        let mut picked = adversary_ids.to_vec();
        picked.extend(
            sample(&mut rng, benign.len(), m - adversary_ids.len())
                .into_iter()
                .map(|i| benign[i]),
        );
        picked
    } else {
        sample(&mut rng, n, m).into_vec()
    };
    out.sort_unstable();
    Ok(out)
}

/// Telemetry of one round (`round` maps the global model of that index to
/// the next one).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected_ids: Vec<usize>,
    /// Selected participants that trained adversarially this round.
    pub attacking_ids: Vec<usize>,
    pub accepted_ids: Vec<usize>,
    pub update_norms: Vec<f64>,
    pub asr: Option<f64>,
    pub accuracy: Option<f64>,
    pub diagnostics: Diagnostics,
    /// Adversarial updates accepted by the server so far, this round
    /// included.
    pub adversary_selected_cum: usize,
}

impl RoundRecord {
    pub fn accepted_count(&self) -> usize {
        self.accepted_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub round: usize,
    pub params: FlatParams,
    pub partition: PartitionPlan,
    pub history: Vec<RoundRecord>,
}

/// Everything a round produces.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub record: RoundRecord,
    pub updates: UpdateSet,
}

/// A prepared experiment: data loaded, partitioned and the model
/// initialized.
pub struct Simulation {
    config: SimConfig,
    model: ModelSpec,
    locals: Vec<Dataset>,
    test: Dataset,
    adversaries: Vec<usize>,
    root: RngStream,
    state: GlobalState,
    pool: Option<rayon::ThreadPool>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.dataset.load(config.seed)?;
        if test.is_empty() {
            return Err(Error::invalid("test set is empty"));
        }
        let layers = config
            .model
            .clone()
            .unwrap_or_else(|| ModelSpec::default_cnn_layers(train.num_classes()));
        let model = ModelSpec::new(layers, train.input_shape().to_vec(), train.num_classes())?;
        if config.attack.trigger.target_class() >= model.num_classes() {
            return Err(Error::Config {
                pointer: "/attack/trigger/target_class".into(),
                message: format!("model has only {} classes", model.num_classes()),
            });
        }
        config
            .attack
            .trigger
            .offsets(model.input_shape())
            .map_err(|e| Error::Config {
                pointer: "/attack/trigger".into(),
                message: e.to_string(),
            })?;
        let root = RngStream::new(config.seed);
        let partition = dirichlet_partition(
            &train.labels(),
            train.num_classes(),
            config.num_participants,
            config.partition.alpha,
            config.partition.seed.unwrap_or(config.seed),
        )?;
        let locals = partition
            .assignments
            .iter()
            .map(|idx| train.subset(idx))
            .collect::<Result<Vec<_>>>()?;
        let params = match &config.pretrained {
            Some(path) => {
                let p = FlatParams::load(path)?;
                if p.layout() != &model.layout() {
                    return Err(Error::shape(format!(
                        "{} does not match the configured model",
                        path.display()
                    )));
                }
                p
            }
            None => model.init_params(root.derive(purpose::INIT)),
        };
        let params = match &config.pretrain {
            Some(warm) => {
                let stream = root.derive_path(&[purpose::INIT, 1]);
                let update = local_train(
                    &model,
                    &params,
                    &train,
                    &AttackConfig::benign(),
                    warm,
                    stream,
                )?;
                params.apply(&update)?
            }
            None => params,
        };
        Ok(Simulation {
            adversaries: config.adversaries(),
            config,
            model,
            locals,
            test,
            root,
            state: GlobalState {
                round: 0,
                params,
                partition,
                history: Vec::new(),
            },
            pool: None,
        })
    }

    /// Caps local training and evaluation at `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        self.pool = Some(pool);
        Ok(self)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn local_data(&self, participant: usize) -> Option<&Dataset> {
        self.locals.get(participant)
    }

    pub fn adversaries(&self) -> &[usize] {
        &self.adversaries
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Training config for a participant this round.
    pub fn attack_for(&self, participant: usize, round: usize) -> AttackConfig {
        let slot = self.adversaries.iter().position(|&a| a == participant);
        match slot {
            Some(k) if round >= self.config.attack_start_round => {
                let mut a = self.config.attack.clone();
                if let Some(d) = a.dba.as_mut() {
                    d.part_index = k % d.num_parts;
                }
                a
            }
            _ => AttackConfig::benign(),
        }
    }

    /// ASR and accuracy of the current global model.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let p = &self.state.params;
        let trigger = &self.config.attack.trigger;
        self.install(|| {
            let asr = if self.config.analysis.exclude_target_class {
                attack_success_rate_excluding_target(&self.model, p, &self.test, trigger)?
            } else {
                attack_success_rate(&self.model, p, &self.test, trigger)?
            };
            Ok((asr, test_accuracy(&self.model, p, &self.test)?))
        })
    }

    /// Selection, local training, aggregation, evaluation.
    pub fn run_round(&mut self) -> Result<RoundOutput> {
        let t = self.state.round;
        if self.is_finished() {
            return Err(Error::invalid(format!(
                "all {} rounds already ran",
                self.config.rounds
            )));
        }
        self.round_inner(t).map_err(|e| e.in_round(t))
    }

    fn round_inner(&mut self, t: usize) -> Result<RoundOutput> {
        let cfg = &self.config;
        let attacking_phase = t >= cfg.attack_start_round;
        let selected = select_participants(
            self.root.derive_path(&[purpose::SELECT, t as u64]),
            cfg.num_participants,
            cfg.per_round,
            &self.adversaries,
            cfg.adversary_always_selected && attacking_phase && !self.adversaries.is_empty(),
        )?;
        let global = &self.state.params;
        let updates: Vec<FlatUpdate> = self.install(|| {
            selected
                .par_iter()
                .map(|&id| {
                    let stream =
                        self.root
                            .derive_path(&[purpose::LOCAL_TRAIN, t as u64, id as u64]);
                    local_train(
                        &self.model,
                        global,
                        &self.locals[id],
                        &self.attack_for(id, t),
                        &cfg.train,
                        stream,
                    )
                })
                .collect::<Result<_>>()
        })?;
        let set = UpdateSet::new(selected.iter().copied().zip(updates).collect())?;
        let outcome = aggregate(
            &set,
            &cfg.defense,
            self.root.derive_path(&[purpose::AGGREGATE, t as u64]),
        )?;
        let attacking_ids: Vec<usize> = if attacking_phase {
            selected
                .iter()
                .copied()
                .filter(|id| self.adversaries.contains(id))
                .collect()
        } else {
            Vec::new()
        };
        let accepted_adv = outcome
            .accepted_ids
            .iter()
            .filter(|id| attacking_ids.contains(id))
            .count();
        let prev = self
            .state
            .history
            .last()
            .map_or(0, |r| r.adversary_selected_cum);
        self.state.params = self.state.params.apply(&outcome.aggregate)?;
        self.state.round = t + 1;
        let due = (t + 1).is_multiple_of(cfg.eval_every) || t + 1 == cfg.rounds;
        let (asr, accuracy) = if due {
            let (a, b) = self.evaluate()?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let record = RoundRecord {
            round: t,
            update_norms: outcome.diagnostics.norms.clone(),
            selected_ids: selected,
            attacking_ids,
            accepted_ids: outcome.accepted_ids,
            asr,
            accuracy,
            diagnostics: outcome.diagnostics,
            adversary_selected_cum: prev + accepted_adv,
        };
        self.state.history.push(record.clone());
        Ok(RoundOutput {
            record,
            updates: set,
        })
    }

    /// Runs the remaining rounds, calling `observe` after each one.
    pub fn run_with(
        &mut self,
        mut observe: impl FnMut(&Simulation, &RoundOutput) -> Result<()>,
    ) -> Result<()> {
        while !self.is_finished() {
            let out = self.run_round()?;
            observe(self, &out)?;
        }
        Ok(())
    }

    pub fn into_state(self) -> GlobalState {
        self.state
    }
}

/// Runs a whole experiment and returns its history.
pub fn run_simulation(config: SimConfig) -> Result<Vec<RoundRecord>> {
    let mut sim = Simulation::new(config)?;
    sim.run_with(|_, _| Ok(()))?;
    Ok(sim.into_state().history)
}
