use super::distance::squared_distance;
use super::{scaled_mean, AggregationOutcome, Diagnostics, UpdateSet};
use crate::error::{Error, Result};

/// Krum score of every update: the sum of distances to its `n - f - 2`
/// nearest neighbours (squared distances when `squared`). Neighbours are
/// ranked by (distance, index) and summed nearest first.
pub fn krum_scores(set: &UpdateSet, f: usize, squared: bool) -> Result<Vec<f64>> {
    let n = set.len();
    if n < f + 3 {
        return Err(Error::invalid(format!(
            "krum needs n - f - 2 >= 1, got n = {n}, f = {f}"
        )));
    }
    let k = n - f - 2;
    let u = set.updates();
    let mut d2 = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(u[i].values(), u[j].values());
            d2[i][j] = d;
            d2[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (if squared { d2[i][j] } else { d2[i][j].sqrt() }, j))
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row[..k].iter().map(|r| r.0).sum()
        })
        .collect())
}

/// Keeps the `m` lowest-scoring updates (ties to the lower id) and averages
/// them.
pub fn multi_krum(
    set: &UpdateSet,
    f: usize,
    m: usize,
    eta: f64,
    squared: bool,
) -> Result<AggregationOutcome> {
    let n = set.len();
    if 2 * f + 2 > n {
        return Err(Error::invalid(format!(
            "multi-krum needs 2f + 2 <= n, got n = {n}, f = {f}"
        )));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "multi-krum needs 1 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    let scores = krum_scores(set, f, squared)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut chosen = order[..m].to_vec();
    chosen.sort_unstable();
    let aggregate = scaled_mean(chosen.iter().map(|&i| &set.updates()[i]), set.dim(), eta)?;
    Ok(AggregationOutcome {
        aggregate,
        accepted_ids: chosen.iter().map(|&i| set.ids()[i]).collect(),
        diagnostics: Diagnostics {
            scores: Some(scores),
            norms: set.norms(),
            ..Diagnostics::default()
        },
    })
}
