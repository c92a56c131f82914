use std::fs;
use std::path::{Path, PathBuf};

use super::config::config_from_value;
use super::run::{create_dir, write_file};
use crate::aggregation::{distance_matrix_csv, pairwise_distance, Metric, UpdateSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{SimConfig, Simulation};
use crate::metrics::{activation_grid, gain_report, rolling_average, GainReport};
use crate::nn::{FlatParams, FlatUpdate, LayerSpec};
use crate::rng::{purpose, RngStream};

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Config stored by a run.
pub fn load_run_config(dir: &Path) -> Result<SimConfig> {
    let path = require(dir.join("config.json"))?;
    config_from_value(serde_json::from_str(&read(&path)?)?)
}

/// Model, data and partition of a finished run, without repeating its
/// warm-up (analyses load parameters from checkpoints instead).
fn rebuild(config: &SimConfig) -> Result<Simulation> {
    let mut c = config.clone();
    c.pretrain = None;
    c.pretrained = None;
    Simulation::new(c)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

/// `round` selects `checkpoints/round_NNNN.fp32`; otherwise the latest
/// evaluated round, falling back to the initial parameters.
pub fn checkpoint(dir: &Path, round: Option<usize>) -> Result<PathBuf> {
    let ckpt = dir.join("checkpoints");
    if let Some(r) = round {
        return require(ckpt.join(format!("round_{r:04}.fp32")));
    }
    let latest = sorted_entries(&require(ckpt.clone())?)?
        .into_iter()
        .rev()
        .find(|p| {
            p.extension().is_some_and(|e| e == "fp32")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("round_"))
        });
    match latest {
        Some(p) => Ok(p),
        None => require(ckpt.join("initial.fp32")),
    }
}

/// Euclidean and cosine matrices for every stored round of updates, written
/// to `distances/round_NNNN_{euclidean,cosine}.csv`.
pub fn cmd_distances(dir: &Path) -> Result<Vec<PathBuf>> {
    let rounds = sorted_entries(&require(dir.join("updates"))?)?;
    let out_dir = dir.join("distances");
    create_dir(&out_dir)?;
    let mut written = Vec::new();
    for round_dir in rounds.iter().filter(|p| p.is_dir()) {
        let mut pairs = Vec::new();
        for file in sorted_entries(round_dir)? {
            let id = file
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| {
                    Error::invalid(format!("{} is not <participant>.fp32", file.display()))
                })?;
            let (_, update): (_, FlatUpdate) = FlatUpdate::load(&file)?;
            pairs.push((id, update));
        }
        let set = UpdateSet::new(pairs)?;
        let name = round_dir
            .file_name()
            .expect("entry has a name")
            .to_string_lossy()
            .into_owned();
        for (metric, tag) in [(Metric::Euclidean, "euclidean"), (Metric::Cosine, "cosine")] {
            let m = pairwise_distance(&set, metric)?;
            let path = out_dir.join(format!("{name}_{tag}.csv"));
            write_file(&path, distance_matrix_csv(set.ids(), &m))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Update gains of the run's attack against benign training for every
/// participant, from the chosen checkpoint. Writes `gains.csv`.
pub fn cmd_gains(dir: &Path, round: Option<usize>) -> Result<GainReport> {
    let config = load_run_config(dir)?;
    let global = FlatParams::load(&checkpoint(dir, round)?)?;
    let sim = rebuild(&config)?;
    let locals: Vec<(usize, Dataset)> = (0..config.num_participants)
        .map(|id| (id, sim.local_data(id).expect("participant exists").clone()))
        .collect();
    let report = gain_report(
        sim.model(),
        &global,
        &locals,
        &config.attack,
        &config.train,
        config.analysis.top_k,
        RngStream::new(config.seed).derive(purpose::GAINS),
    )?;
    write_file(&dir.join("gains.csv"), report.to_csv())?;
    Ok(report)
}

/// Per-class averaged activations of the configured layer (default: the last
/// pooling layer) on the test set, written under `activations/`.
pub fn cmd_activations(dir: &Path, round: Option<usize>) -> Result<Vec<PathBuf>> {
    let config = load_run_config(dir)?;
    let params = FlatParams::load(&checkpoint(dir, round)?)?;
    let sim = rebuild(&config)?;
    let model = sim.model();
    let layer = match config.analysis.activation_layer {
        Some(l) => l,
        None => model
            .layers()
            .iter()
            .rposition(|l| matches!(l, LayerSpec::MaxPool { .. }))
            .ok_or_else(|| {
                Error::invalid("model has no pooling layer; set analysis.activation_layer")
            })?,
    };
    let out_dir = dir.join("activations");
    create_dir(&out_dir)?;
    let mut written = Vec::new();
    for class in 0..model.num_classes() {
        let samples = sim.test_set().filter_label(class);
        if samples.is_empty() {
            continue;
        }
        let grid = activation_grid(model, &params, &samples, layer)?;
        written.extend(grid.save(&out_dir, &format!("class_{class}"))?);
    }
    Ok(written)
}

/// Appends rolling averages of the ASR and accuracy columns; blank cells
/// (unevaluated rounds) are skipped and stay blank.
pub fn smooth_metrics_csv(text: &str, window: usize) -> Result<String> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("metrics.csv is empty"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::invalid(format!("metrics.csv has no {name} column")))
    };
    let (asr_col, acc_col) = (find("asr")?, find("accuracy")?);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let smooth_col = |col: usize| -> Result<Vec<String>> {
        let mut present = Vec::new();
        let mut values = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let cell = row.get(col).copied().unwrap_or("");
            if !cell.is_empty() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::invalid(format!("row {}: {cell:?} is not a number", i + 1))
                })?;
                present.push(i);
                values.push(v);
            }
        }
        let mut out = vec![String::new(); rows.len()];
        if !values.is_empty() {
            for (i, v) in present.into_iter().zip(rolling_average(&values, window)?) {
                out[i] = v.to_string();
            }
        }
        Ok(out)
    };
    let (asr, acc) = (smooth_col(asr_col)?, smooth_col(acc_col)?);
    let mut out = format!("{header},asr_smoothed,accuracy_smoothed\n");
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", row.join(","), asr[i], acc[i]));
    }
    Ok(out)
}

/// Writes `metrics_smoothed.csv`; the window defaults to the run's
/// `analysis.smooth_window`.
pub fn cmd_smooth(dir: &Path, window: Option<usize>) -> Result<PathBuf> {
    let window = match window {
        Some(w) => w,
        None => load_run_config(dir)?.analysis.smooth_window,
    };
    let text = read(&require(dir.join("metrics.csv"))?)?;
    let path = dir.join("metrics_smoothed.csv");
    write_file(&path, smooth_metrics_csv(&text, window)?)?;
    Ok(path)
}
