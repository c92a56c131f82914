//! The `fedkd` command line.

pub mod analyze;
pub mod config;
pub mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::federation::{SimConfig, Simulation};
use crate::nn::{gradient_check, Batch, DenseTensor, GradCheckReport, LossWeights};
use crate::rng::{purpose, RngStream};

pub use config::{apply_override, config_from_value, parse_config};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_BATCH: usize = 8;
const GRADCHECK_FULL_LIMIT: usize = 5_000;
const GRADCHECK_SUBSET: usize = 500;

#[derive(Parser, Debug)]
#[command(name = "fedkd", version, about = "Federated backdoor simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a simulation and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dot-path override, e.g. `--set attack.alpha=0.7`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Post-hoc analyses of a run directory.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Write the participant data partition without training.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and numeric gradients of the configured model.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

#[derive(Subcommand, Debug)]
pub enum Analysis {
    /// Pairwise update distances for every saved round.
    Distances {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Attack-vs-benign update gains per participant.
    Gains {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        round: Option<usize>,
    },
    /// Per-class mean activation maps.
    Activations {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        round: Option<usize>,
    },
    /// Rolling averages of ASR and accuracy.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        window: Option<usize>,
    },
}

fn without_warmup(mut config: SimConfig) -> SimConfig {
    config.pretrain = None;
    config
}

/// Partition plan the run with this config would use.
pub fn cmd_partition(config: SimConfig, out: &Path) -> Result<()> {
    let sim = Simulation::new(without_warmup(config))?;
    run::write_file(
        out,
        serde_json::to_string_pretty(&sim.state().partition)? + "\n",
    )
}

/// Gradient check on a seeded batch of test examples with random teacher
/// logits, so the distillation term is exercised too.
pub fn cmd_gradcheck(config: SimConfig, corrupt: bool) -> Result<GradCheckReport> {
    let stream = RngStream::new(config.seed).derive(purpose::GRADCHECK);
    let sim = Simulation::new(without_warmup(config))?;
    let model = sim.model();
    let test = sim.test_set();
    let mut rng = stream.rng();
    let picks = sample(&mut rng, test.len(), GRADCHECK_BATCH.min(test.len())).into_vec();
    let examples: Vec<_> = picks.iter().map(|&i| &test.examples()[i]).collect();
    let inputs = DenseTensor::stack(examples.iter().map(|e| &e.input))?;
    let labels = examples.iter().map(|e| e.label).collect();
    let classes = model.num_classes();
    let teacher: Vec<f32> = (0..examples.len() * classes)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let teacher = DenseTensor::new(vec![examples.len(), classes], teacher)?;
    let batch = Batch::new(inputs, labels, Some(teacher));

    let params = &sim.state().params;
    let coords = (params.len() > GRADCHECK_FULL_LIMIT).then(|| {
        let mut c = sample(&mut rng, params.len(), GRADCHECK_SUBSET).into_vec();
        c.sort_unstable();
        c
    });
    let attack = &sim.config().attack;
    gradient_check(
        model,
        params,
        &batch,
        LossWeights::distill(attack.alpha),
        attack.temperature,
        GRADCHECK_STEP,
        coords.as_deref(),
        corrupt,
    )
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    match e {
        Error::Config { pointer, .. } => v["pointer"] = pointer.clone().into(),
        Error::Format { path, offset, .. } => {
            v["path"] = path.display().to_string().into();
            v["offset"] = (*offset).into();
        }
        Error::MissingArtifact(p) | Error::Io { path: p, .. } => {
            v["path"] = p.display().to_string().into()
        }
        Error::Round { round, .. } => v["round"] = (*round).into(),
        _ => {}
    }
    v
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, set } => {
            let config = parse_config(&config, &set)?;
            let records = run::cmd_run(config, &out)?;
            if let Some(last) = records.iter().rev().find(|r| r.asr.is_some()) {
                println!(
                    "round {}: asr {:.4} accuracy {:.4}",
                    last.round,
                    last.asr.unwrap_or_default(),
                    last.accuracy.unwrap_or_default()
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Analyze { what } => match what {
            Analysis::Distances { input } => {
                let files = analyze::cmd_distances(&input)?;
                println!("wrote {} matrices", files.len());
            }
            Analysis::Gains { input, round } => {
                let report = analyze::cmd_gains(&input, round)?;
                let show =
                    |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
                println!(
                    "participants {} median_update_gain {} median_sign_gain {}",
                    report.len(),
                    show(report.median_update_gain()),
                    show(report.median_sign_gain())
                );
            }
            Analysis::Activations { input, round } => {
                let files = analyze::cmd_activations(&input, round)?;
                println!("wrote {} files", files.len());
            }
            Analysis::Smooth { input, window } => {
                println!("wrote {}", analyze::cmd_smooth(&input, window)?.display());
            }
        },
        Command::Partition { config, out } => {
            cmd_partition(parse_config(&config, &[])?, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck { config, corrupt } => {
            let report = cmd_gradcheck(parse_config(&config, &[])?, corrupt)?;
            println!(
                "checked {} coordinates, max_rel_error {:.3e}",
                report.checked, report.max_rel_error
            );
            return Ok(report.max_rel_error < GRADCHECK_TOLERANCE);
        }
    }
    Ok(true)
}

/// Entry point of the `fedkd` binary. `FEDKD_THREADS` caps the worker pool.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("FEDKD_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
