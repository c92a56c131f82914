use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, RngStream};

/// Which dataset indices each participant owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub alpha: f64,
    pub seed: u64,
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_participants(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Checks that the assignments are a disjoint cover of `0..dataset_len`.
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let mut seen = vec![false; dataset_len];
        for (p, idx) in self.assignments.iter().enumerate() {
            for &i in idx {
                match seen.get_mut(i) {
                    None => {
                        return Err(Error::invalid(format!(
                            "participant {p} owns index {i} beyond the dataset"
                        )))
                    }
                    Some(true) => {
                        return Err(Error::invalid(format!("index {i} is assigned twice")))
                    }
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("index {i} is not assigned")));
        }
        Ok(())
    }
}

/// Per class, draws participant proportions from Dirichlet(alpha) and assigns
/// each of that class's examples to a participant by a categorical draw.
pub fn dirichlet_partition(
    labels: &[usize],
    num_classes: usize,
    num_participants: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_participants == 0 {
        return Err(Error::invalid("need at least one participant"));
    }
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "Dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!(
            "label {l} outside {num_classes} classes"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = RngStream::new(seed).derive(purpose::PARTITION).rng();
    let mut assignments = vec![Vec::new(); num_participants];
    for class in 0..num_classes {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        let mut weights: Vec<f64> = (0..num_participants)
            .map(|_| gamma.sample(&mut rng))
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            // every draw underflowed; fall back to a uniform split
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        if num_participants == 1 {
            assignments[0].extend(&members);
            continue;
        }
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
        for i in members {
            assignments[pick.sample(&mut rng)].push(i);
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan {
        alpha,
        seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(classes: usize, per: usize) -> Vec<usize> {
        (0..classes)
            .flat_map(|c| std::iter::repeat_n(c, per))
            .collect()
    }

    #[test]
    fn single_participant_gets_everything() {
        let l = labels(3, 7);
        let plan = dirichlet_partition(&l, 3, 1, 0.5, 9).unwrap();
        assert_eq!(plan.assignments[0], (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn hundred_participants_cover_the_dataset() {
        let l = labels(10, 100);
        let plan = dirichlet_partition(&l, 10, 100, 0.5, 1).unwrap();
        assert_eq!(plan.sizes().iter().sum::<usize>(), 1000);
        plan.validate(1000).unwrap();
    }

    #[test]
    fn large_alpha_is_nearly_balanced() {
        // statistical: 10k samples, near-uniform proportions, multinomial noise only
        let l = labels(10, 1000);
        let plan = dirichlet_partition(&l, 10, 10, 1000.0, 4).unwrap();
        let sizes = plan.sizes();
        let (mx, mn) = (*sizes.iter().max().unwrap(), *sizes.iter().min().unwrap());
        assert!((mx as f64) / (mn as f64) < 1.5, "{sizes:?}");
    }

    #[test]
    fn small_alpha_is_skewed() {
        let l = labels(10, 200);
        let plan = dirichlet_partition(&l, 10, 10, 0.1, 4).unwrap();
        let dominant = plan
            .assignments
            .iter()
            .filter(|a| !a.is_empty())
            .map(|a| {
                let mut counts = [0usize; 10];
                a.iter().for_each(|&i| counts[l[i]] += 1);
                *counts.iter().max().unwrap() as f64 / a.len() as f64
            })
            .fold(0.0, f64::max);
        assert!(dominant > 0.5);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(dirichlet_partition(&[0, 1], 2, 0, 0.5, 0).is_err());
        assert!(dirichlet_partition(&[0, 1], 2, 2, 0.0, 0).is_err());
        assert!(dirichlet_partition(&[0, 5], 2, 2, 0.5, 0).is_err());
    }

    proptest! {
        #[test]
        fn always_a_disjoint_cover(
            n in 1usize..20, alpha in 0.05f64..50.0, seed in any::<u64>(),
            raw in proptest::collection::vec(0usize..5, 0..200),
        ) {
            let plan = dirichlet_partition(&raw, 5, n, alpha, seed).unwrap();
            prop_assert!(plan.validate(raw.len()).is_ok());
            prop_assert_eq!(plan, dirichlet_partition(&raw, 5, n, alpha, seed).unwrap());
        }
    }
}
