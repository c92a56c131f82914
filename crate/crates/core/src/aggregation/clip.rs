use rand_distr::{Distribution, Normal};

use super::{scaled_mean, AggregationOutcome, Diagnostics, UpdateSet};
use crate::error::{Error, Result};
use crate::nn::FlatUpdate;
use crate::rng::RngStream;

/// Rescales `u` onto the ball of radius `bound` when it lies outside.
pub fn norm_clip(u: &FlatUpdate, bound: f64) -> Result<FlatUpdate> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::invalid(format!(
            "clip bound must be positive, got {bound}"
        )));
    }
    let norm = u.l2_norm();
    if norm <= bound {
        return Ok(u.clone());
    }
    let scale = bound / norm;
    Ok(FlatUpdate::new(
        u.values()
            .iter()
            .map(|&v| (f64::from(v) * scale) as f32)
            .collect(),
    ))
}

pub(crate) fn add_noise(u: &mut FlatUpdate, sigma: f64, stream: RngStream) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream.rng();
    for v in u.values_mut() {
        *v = (f64::from(*v) + normal.sample(&mut rng)) as f32;
    }
    Ok(())
}

/// Clip every update to `bound`, average, then add Gaussian noise.
pub fn weak_dp_aggregate(
    set: &UpdateSet,
    bound: f64,
    sigma: f64,
    eta: f64,
    stream: RngStream,
) -> Result<AggregationOutcome> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let clipped = set
        .updates()
        .iter()
        .map(|u| norm_clip(u, bound))
        .collect::<Result<Vec<_>>>()?;
    let mut aggregate = scaled_mean(&clipped, set.dim(), eta)?;
    add_noise(&mut aggregate, sigma, stream)?;
    Ok(AggregationOutcome {
        aggregate,
        accepted_ids: set.ids().to_vec(),
        diagnostics: Diagnostics {
            norms: set.norms(),
            clip_bound: Some(bound),
            noise_sigma: Some(sigma),
            ..Diagnostics::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::fedavg;

    #[test]
    fn short_vectors_untouched() {
        let u = FlatUpdate::new(vec![0.3, 0.4]);
        assert_eq!(norm_clip(&u, 1.0).unwrap(), u);
    }

    #[test]
    fn long_vectors_land_on_the_sphere() {
        let u = FlatUpdate::new(vec![6.0, 8.0]);
        let c = norm_clip(&u, 5.0).unwrap();
        assert!((c.l2_norm() - 5.0).abs() < 1e-6);
        assert_eq!(c.values(), &[3.0, 4.0]);
        assert!(norm_clip(&u, 0.0).is_err());
    }

    #[test]
    fn noiseless_weak_dp_is_clipped_mean() {
        let s = UpdateSet::from_updates(vec![
            FlatUpdate::new(vec![0.1, 0.2]),
            FlatUpdate::new(vec![-0.2, 0.1]),
        ])
        .unwrap();
        let a = weak_dp_aggregate(&s, 10.0, 0.0, 1.0, RngStream::new(1)).unwrap();
        assert_eq!(a.aggregate, fedavg(&s, 1.0).unwrap().aggregate);
    }

    #[test]
    fn noise_is_seeded() {
        let s = UpdateSet::from_updates(vec![FlatUpdate::new(vec![0.0; 64]); 3]).unwrap();
        let a = weak_dp_aggregate(&s, 1.0, 0.1, 1.0, RngStream::new(5)).unwrap();
        let b = weak_dp_aggregate(&s, 1.0, 0.1, 1.0, RngStream::new(5)).unwrap();
        let c = weak_dp_aggregate(&s, 1.0, 0.1, 1.0, RngStream::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.aggregate, c.aggregate);
        assert!(a.aggregate.values().iter().any(|&v| v != 0.0));
    }
}
