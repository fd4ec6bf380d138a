use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Subject indices (into the cohort) for one fold, each list sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

impl FoldSplit {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

/// Stratified k-fold split with a stratified validation subset carved out of
/// each fold's training part.
///
/// Members of each class are shuffled and dealt round-robin over the folds;
/// the deal continues where the previous class stopped so fold sizes stay
/// within one of each other.
pub fn stratified_kfold(labels: &[u8], k: usize, validation_fraction: f64, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if !(validation_fraction >= 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation_fraction must lie in [0, 1), got {validation_fraction}"
        )));
    }
    let mut classes: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("stratified split needs at least two classes".into()));
    }
    if let Some((c, members)) = classes.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {} members, fewer than k = {k}",
            members.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); k];
    let mut next = 0;
    for members in classes.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for i in shuffled {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }

    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for members in classes.values() {
                let mut rest: Vec<usize> = members.iter().copied().filter(|i| test.binary_search(i).is_err()).collect();
                rest.shuffle(&mut rng);
                let n_val = (validation_fraction * rest.len() as f64).round() as usize;
                let n_val = n_val.min(rest.len().saturating_sub(1));
                validation.extend_from_slice(&rest[..n_val]);
                train.extend_from_slice(&rest[n_val..]);
            }
            train.sort_unstable();
            validation.sort_unstable();
            Fold { train, validation, test }
        })
        .collect();
    Ok(FoldSplit { folds })
}
