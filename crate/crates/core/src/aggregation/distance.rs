use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::UpdateSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Symmetric `n x n` matrix with a zero diagonal.
pub fn pairwise_distance(set: &UpdateSet, metric: Metric) -> Result<Vec<Vec<f64>>> {
    let n = set.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least two updates, got {n}"
        )));
    }
    let u = set.updates();
    let norms: Vec<f64> = u.iter().map(|x| x.l2_norm()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroVector {
                participant: set.ids()[i],
            });
        }
    }
    // Upper triangle computed in parallel; each row owns its slot.
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| match metric {
                    Metric::Euclidean => squared_distance(u[i].values(), u[j].values()).sqrt(),
                    Metric::Cosine => {
                        1.0 - dot(u[i].values(), u[j].values()) / (norms[i] * norms[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in upper.into_iter().enumerate() {
        for (k, d) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// Row-major CSV with a header row of participant ids.
pub fn distance_matrix_csv(ids: &[usize], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("participant");
    for id in ids {
        let _ = write!(out, ",{id}");
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(matrix) {
        let _ = write!(out, "{id}");
        for d in row {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
    }
    out
}
