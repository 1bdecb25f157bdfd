//! Validation split and joint-embedding pair construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_mask, retrieve_neighbor, AugmentMode, AugmentSpec, Dataset, Sample};
use crate::error::{Error, Result};

/// How the pairs of one batch were formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub temporal: usize,
    pub self_mask: usize,
}

impl PairStats {
    pub fn add(&mut self, other: PairStats) {
        self.temporal += other.temporal;
        self.self_mask += other.self_mask;
    }
}

/// Masked partner for every sample in `batch`, in order.
///
/// In temporal mode the partner is the masked predecessor when one exists
/// in `dataset`; otherwise, and always in self-mask mode, it is a masked
/// copy of the sample itself.
pub fn jel_batch_pairs<R: Rng + ?Sized>(
    batch: &[&Sample],
    dataset: &Dataset,
    augment: &AugmentSpec,
    rng: &mut R,
) -> (Vec<Sample>, PairStats) {
    let mut stats = PairStats::default();
    let pairs = batch
        .iter()
        .map(|s| {
            let neighbor = match augment.mode {
                AugmentMode::TemporalNeighbor => retrieve_neighbor(dataset, s, augment.offset),
                AugmentMode::SelfMask => None,
            };
            match neighbor {
                Some(n) => {
                    stats.temporal += 1;
                    apply_mask(n, augment, rng)
                }
                None => {
                    stats.self_mask += 1;
                    apply_mask(s, augment, rng)
                }
            }
        })
        .collect();
    log::trace!(
        "jel pairs: {} temporal, {} self-mask",
        stats.temporal,
        stats.self_mask
    );
    (pairs, stats)
}

/// Splits off `fraction` of every (domain, class) stratum for validation.
///
/// Each non-empty stratum contributes `round(fraction · n)` samples, at
/// least one when it holds two or more. Returns `(train, validation)`.
pub fn stratified_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut strata: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        strata.entry((s.domain_id, s.label)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        let mut take = (fraction * members.len() as f64).round() as usize;
        if take == 0 && members.len() >= 2 {
            take = 1;
        }
        take = take.min(members.len() - 1);
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    if val.is_empty() {
        return Err(Error::config(
            "validation split is empty; dataset too small",
        ));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&val)))
}
