use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Cohort, DataError};

/// Patient-level assignment of a cohort into `k` folds.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    /// Share of each training partition held out for validation.
    pub val_fraction: f64,
}

impl CohortSplit {
    /// Cohort indices assigned to `fold`, in cohort order.
    pub fn fold_indices(&self, cohort: &Cohort, fold: usize) -> Vec<usize> {
        cohort
            .bags
            .iter()
            .enumerate()
            .filter(|(_, b)| self.assignments.get(&b.patient_id) == Some(&fold))
            .map(|(i, _)| i)
            .collect()
    }

    /// Cohort indices outside `fold`.
    pub fn rest_indices(&self, cohort: &Cohort, fold: usize) -> Vec<usize> {
        cohort
            .bags
            .iter()
            .enumerate()
            .filter(|(_, b)| self.assignments.get(&b.patient_id).is_some_and(|&f| f != fold))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffled patient-level partition into `k` folds; earlier folds receive
/// the remainder, so sizes differ by at most one.
pub fn split_folds(cohort: &Cohort, k: usize, seed: u64) -> Result<CohortSplit, DataError> {
    if k < 2 || cohort.len() < k {
        return Err(DataError::TooFewPatients { needed: k.max(2), found: cohort.len() });
    }
    let mut ids: Vec<&str> = cohort.bags.iter().map(|b| b.patient_id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = ids.iter().enumerate().map(|(i, id)| (id.to_string(), i % k)).collect();
    Ok(CohortSplit { k, assignments, val_fraction: 0.2 })
}

/// Splits `indices` into (train, validation), stratified by censor flag.
/// Each class with at least two members contributes
/// `max(1, round(val_fraction · n))` patients to validation.
pub fn train_val_split(cohort: &Cohort, indices: &[usize], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for flag in [0u8, 1] {
        let mut class: Vec<usize> = indices.iter().copied().filter(|&i| cohort.bags[i].censor == flag).collect();
        class.shuffle(&mut rng);
        let n_val = if class.len() >= 2 {
            ((val_fraction * class.len() as f64).round() as usize).clamp(1, class.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&class[..n_val]);
        train.extend_from_slice(&class[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}
