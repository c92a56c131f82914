use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::federation::{RoundRecord, SimConfig, Simulation};

pub const METRICS_HEADER: &str =
    "round,asr,accuracy,adversary_selected_cum,accepted_count,clip_bound,noise_sigma";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One metrics.csv line (no newline); unevaluated rounds leave ASR and
/// accuracy blank.
pub fn metrics_row(r: &RoundRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.round,
        opt(r.asr),
        opt(r.accuracy),
        r.adversary_selected_cum,
        r.accepted_count(),
        opt(r.diagnostics.clip_bound),
        opt(r.diagnostics.noise_sigma),
    )
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(out: &Path, round: usize) -> PathBuf {
    out.join("checkpoints")
        .join(format!("round_{round:04}.fp32"))
}

pub fn updates_dir(out: &Path, round: usize) -> PathBuf {
    out.join("updates").join(format!("round_{round:04}"))
}

/// Runs a simulation and writes its artifacts under `out`:
/// `config.json`, `partition.json`, `metrics.csv`, `rounds.jsonl`,
/// `checkpoints/initial.fp32` plus one `.fp32`/`.json` pair per evaluated
/// round, and `updates/round_NNNN/<id>.fp32` when `save_updates` is set.
pub fn cmd_run(config: SimConfig, out: &Path) -> Result<Vec<RoundRecord>> {
    create_dir(&out.join("checkpoints"))?;
    write_file(
        &out.join("config.json"),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;
    let mut sim = Simulation::new(config)?;
    write_file(
        &out.join("partition.json"),
        serde_json::to_string_pretty(&sim.state().partition)? + "\n",
    )?;
    sim.state()
        .params
        .save(&out.join("checkpoints").join("initial.fp32"))?;

    let metrics_path = out.join("metrics.csv");
    let rounds_path = out.join("rounds.jsonl");
    let open = |p: &Path| {
        fs::File::create(p)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    let mut metrics = open(&metrics_path)?;
    let mut rounds = open(&rounds_path)?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;

    let layout = sim.model().layout();
    while !sim.is_finished() {
        let output = sim.run_round()?;
        let r = &output.record;
        writeln!(metrics, "{}", metrics_row(r)).map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(rounds, "{}", serde_json::to_string(r)?)
            .map_err(|e| Error::io(&rounds_path, e))?;
        if r.asr.is_some() {
            let ckpt = checkpoint_path(out, r.round);
            sim.state().params.save(&ckpt)?;
            write_file(
                &ckpt.with_extension("json"),
                serde_json::to_string_pretty(r)? + "\n",
            )?;
        }
        if sim.config().save_updates {
            let dir = updates_dir(out, r.round);
            create_dir(&dir)?;
            for (id, u) in output.updates.ids().iter().zip(output.updates.updates()) {
                u.save(&layout, &dir.join(format!("{id}.fp32")))?;
            }
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    rounds.flush().map_err(|e| Error::io(&rounds_path, e))?;
    Ok(sim.into_state().history)
}

/// Renders rows as metrics.csv text.
pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{}", metrics_row(r));
    }
    s
}
