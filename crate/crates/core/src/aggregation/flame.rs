use super::clip::{add_noise, norm_clip};
use super::{
    hdbscan_largest_cluster, pairwise_distance, scaled_mean, AggregationOutcome, Diagnostics,
    Metric, UpdateSet,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `floor(fraction * n) + 1`, clamped to `[2, n]`.
pub fn flame_min_cluster_size(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 + 1e-9).floor() as usize + 1;
    k.clamp(2, n.max(2))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Cosine-distance clustering keeps the largest cluster; survivors are
/// clipped to their median norm, averaged and noised with
/// `sigma = lambda * median`.
pub fn flame_aggregate(
    set: &UpdateSet,
    lambda: f64,
    min_cluster_fraction: f64,
    eta: f64,
    stream: RngStream,
) -> Result<AggregationOutcome> {
    let n = set.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "flame needs at least 3 updates, got {n}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let dist = pairwise_distance(set, Metric::Cosine)?;
    let kept =
        hdbscan_largest_cluster(&dist, flame_min_cluster_size(min_cluster_fraction, n))?.members;
    let norms = set.norms();
    let mut kept_norms: Vec<f64> = kept.iter().map(|&i| norms[i]).collect();
    kept_norms.sort_by(f64::total_cmp);
    let bound = median(&kept_norms);
    let clipped = kept
        .iter()
        .map(|&i| {
            if bound > 0.0 {
                norm_clip(&set.updates()[i], bound)
            } else {
                Ok(set.updates()[i].clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut aggregate = scaled_mean(&clipped, set.dim(), eta)?;
    let sigma = lambda * bound;
    add_noise(&mut aggregate, sigma, stream)?;
    Ok(AggregationOutcome {
        aggregate,
        accepted_ids: kept.iter().map(|&i| set.ids()[i]).collect(),
        diagnostics: Diagnostics {
            norms,
            clip_bound: Some(bound),
            noise_sigma: Some(sigma),
            ..Diagnostics::default()
        },
    })
}
