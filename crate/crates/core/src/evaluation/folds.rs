use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train_domains: Vec<u32>,
    pub test_domains: Vec<u32>,
}

impl Fold {
    /// `(train, test)` subsets of `dataset`.
    pub fn split(&self, dataset: &Dataset) -> (Dataset, Dataset) {
        (
            dataset.filter_domains(&self.train_domains),
            dataset.filter_domains(&self.test_domains),
        )
    }
}

/// One fold per domain, in ascending domain order.
pub fn lodo_folds(dataset: &Dataset) -> Result<Vec<Fold>> {
    let domains = dataset.domains();
    if domains.len() < 2 {
        return Err(Error::config(format!(
            "leave-one-domain-out needs at least 2 domains, found {}",
            domains.len()
        )));
    }
    Ok(domains
        .iter()
        .enumerate()
        .map(|(id, &d)| Fold {
            id,
            train_domains: domains.iter().copied().filter(|&o| o != d).collect(),
            test_domains: vec![d],
        })
        .collect())
}

/// Shuffles the domains with `seed` and deals them into `k` groups whose
/// sizes differ by at most one.
pub fn kfold_by_domain(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut domains = dataset.domains();
    if k < 2 || k > domains.len() {
        return Err(Error::config(format!(
            "k must lie in 2..={} (domain count), got {k}",
            domains.len()
        )));
    }
    domains.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (domains.len() / k, domains.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for id in 0..k {
        let len = base + usize::from(id < extra);
        let mut test = domains[start..start + len].to_vec();
        test.sort_unstable();
        let mut train: Vec<u32> = domains
            .iter()
            .copied()
            .filter(|d| !test.contains(d))
            .collect();
        train.sort_unstable();
        folds.push(Fold {
            id,
            train_domains: train,
            test_domains: test,
        });
        start += len;
    }
    Ok(folds)
}
