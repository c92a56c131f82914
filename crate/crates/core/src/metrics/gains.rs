use std::fmt::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{local_train, AttackConfig, LocalTrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{FlatParams, FlatUpdate, ModelSpec};
use crate::rng::RngStream;

/// `min(k, max(1, len / 10))`: keeps the mask meaningful on small models.
pub fn effective_top_k(k: usize, len: usize) -> usize {
    k.min((len / 10).max(1)).min(len)
}

/// Indices of the `k` entries with the largest magnitude (ties to the lower
/// index), returned in ascending order.
pub fn top_k_mask(params: &FlatParams, k: usize) -> Result<Vec<usize>> {
    let v = params.values();
    if k > v.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds {} parameters",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

fn check(poison: &FlatUpdate, clean: &FlatUpdate, mask: &[usize]) -> Result<()> {
    if poison.len() != clean.len() {
        return Err(Error::shape(format!(
            "updates have {} and {} values",
            poison.len(),
            clean.len()
        )));
    }
    if let Some(&i) = mask.iter().find(|&&i| i >= poison.len()) {
        return Err(Error::invalid(format!("mask index {i} out of range")));
    }
    Ok(())
}

/// Dot product of the two updates over `mask`.
pub fn update_gain(poison: &FlatUpdate, clean: &FlatUpdate, mask: &[usize]) -> Result<f64> {
    check(poison, clean, mask)?;
    let (p, c) = (poison.values(), clean.values());
    Ok(mask
        .iter()
        .map(|&i| f64::from(p[i]) * f64::from(c[i]))
        .sum())
}

fn sign(v: f32) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of sign agreements over `mask` (`sign(0) = 0`).
pub fn update_sign_gain(poison: &FlatUpdate, clean: &FlatUpdate, mask: &[usize]) -> Result<f64> {
    check(poison, clean, mask)?;
    let (p, c) = (poison.values(), clean.values());
    Ok(mask.iter().map(|&i| sign(p[i]) * sign(c[i])).sum())
}

/// Per-participant gains, rows in participant order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub participant_ids: Vec<usize>,
    pub update_gain: Vec<f64>,
    pub update_sign_gain: Vec<f64>,
    pub mask_size: usize,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn median_of(v: &[f64]) -> Option<f64> {
    let s = sorted(v);
    let n = s.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(s[n / 2]),
        _ => Some((s[n / 2 - 1] + s[n / 2]) / 2.0),
    }
}

impl GainReport {
    pub fn len(&self) -> usize {
        self.participant_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participant_ids.is_empty()
    }

    pub fn sorted_update_gain(&self) -> Vec<f64> {
        sorted(&self.update_gain)
    }

    pub fn sorted_sign_gain(&self) -> Vec<f64> {
        sorted(&self.update_sign_gain)
    }

    pub fn median_update_gain(&self) -> Option<f64> {
        median_of(&self.update_gain)
    }

    pub fn median_sign_gain(&self) -> Option<f64> {
        median_of(&self.update_sign_gain)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("participant_id,update_gain,update_sign_gain\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.participant_ids[i], self.update_gain[i], self.update_sign_gain[i]
            );
        }
        out
    }
}

/// For each participant, trains once benignly and once under `attack` from
/// the same global model, data and random stream, then compares the two
/// updates on the top-`k` parameters of the global model.
pub fn gain_report(
    model: &ModelSpec,
    global: &FlatParams,
    locals: &[(usize, Dataset)],
    attack: &AttackConfig,
    train: &LocalTrainConfig,
    k: usize,
    stream: RngStream,
) -> Result<GainReport> {
    let k = effective_top_k(k, global.len());
    let mask = top_k_mask(global, k)?;
    let benign = AttackConfig::benign();
    let rows: Vec<(f64, f64)> = locals
        .par_iter()
        .map(|(id, data)| {
            let s = stream.derive(*id as u64);
            let clean = local_train(model, global, data, &benign, train, s)?;
            let poison = local_train(model, global, data, attack, train, s)?;
            Ok((
                update_gain(&poison, &clean, &mask)?,
                update_sign_gain(&poison, &clean, &mask)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(GainReport {
        participant_ids: locals.iter().map(|l| l.0).collect(),
        update_gain: rows.iter().map(|r| r.0).collect(),
        update_sign_gain: rows.iter().map(|r| r.1).collect(),
        mask_size: k,
    })
}
