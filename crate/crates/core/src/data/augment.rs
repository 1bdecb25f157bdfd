//! Temporal-neighbor retrieval and stochastic masking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureLayout, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Pair each sample with its masked same-class predecessor.
    TemporalNeighbor,
    /// Pair each sample with a masked copy of itself.
    SelfMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    /// Masking probability.
    pub rho: f64,
    /// Neighbor offset in `t_index` units.
    pub offset: i64,
    /// Grids with fewer electrodes fall back to temporal-segment masking.
    pub min_electrodes_for_spatial: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            mode: AugmentMode::TemporalNeighbor,
            rho: 0.10,
            offset: 1,
            min_electrodes_for_spatial: 10,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if self.offset < 1 {
            return Err(Error::config("neighbor offset must be at least 1"));
        }
        Ok(())
    }
}

/// Same-domain, same-class sample at `t_index − offset`, if any.
pub fn retrieve_neighbor<'a>(
    dataset: &'a Dataset,
    sample: &Sample,
    offset: i64,
) -> Option<&'a Sample> {
    if sample.t_index < 0 || offset < 1 {
        return None;
    }
    let target = sample.t_index - offset;
    if target < 0 {
        return None;
    }
    dataset
        .position_of(sample.domain_id, target)
        .map(|i| &dataset.samples()[i])
        .filter(|n| n.label == sample.label)
}

/// Returns a masked copy of `sample`.
///
/// Grids with enough electrodes lose whole electrode rows independently
/// with probability `rho`. Smaller grids instead lose one contiguous
/// segment of `⌈rho·L⌉` timesteps per electrode, at a uniform start. Flat
/// vectors lose individual coordinates with probability `rho`.
pub fn apply_mask<R: Rng + ?Sized>(sample: &Sample, spec: &AugmentSpec, rng: &mut R) -> Sample {
    let mut out = sample.clone();
    if spec.rho <= 0.0 {
        return out;
    }
    match sample.layout {
        FeatureLayout::Grid {
            electrodes,
            timesteps,
        } if electrodes >= spec.min_electrodes_for_spatial => {
            for row in out.features.chunks_exact_mut(timesteps) {
                if rng.random::<f64>() < spec.rho {
                    row.fill(0.0);
                }
            }
        }
        FeatureLayout::Grid { timesteps, .. } => {
            let len = ((spec.rho * timesteps as f64).ceil() as usize).min(timesteps);
            for row in out.features.chunks_exact_mut(timesteps) {
                let start = rng.random_range(0..=timesteps - len);
                row[start..start + len].fill(0.0);
            }
        }
        FeatureLayout::Flat => {
            for v in &mut out.features {
                if rng.random::<f64>() < spec.rho {
                    *v = 0.0;
                }
            }
        }
    }
    out
}
