//! Samples, datasets, the hierarchical-Gaussian generator, augmentation
//! and on-disk formats.

mod augment;
mod io;
mod synthetic;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{apply_mask, retrieve_neighbor, AugmentMode, AugmentSpec};
pub use io::{
    load_dataset, load_teacher, save_csv, save_grid, save_teacher, sidecar_path, teacher_path,
    DataFormat,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, TeacherRecord};

/// Shape of a sample's feature payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    Flat,
    /// Electrode-major grid, `electrodes × timesteps`.
    Grid {
        electrodes: usize,
        timesteps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub layout: FeatureLayout,
    pub label: usize,
    pub domain_id: u32,
    /// Position within the domain's recording; `-1` when unordered.
    pub t_index: i64,
}

impl Sample {
    pub fn flat(features: Vec<f64>, label: usize, domain_id: u32, t_index: i64) -> Self {
        Self {
            features,
            layout: FeatureLayout::Flat,
            label,
            domain_id,
            t_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Immutable, validated collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_count: usize,
    domain_index: BTreeMap<u32, Vec<usize>>,
    time_index: HashMap<(u32, i64), usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::config("class count must be positive"));
        }
        let layout = samples.first().map(|s| s.layout);
        let width = samples.first().map_or(0, Sample::dim);
        let mut domain_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut time_index = HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.label >= class_count {
                return Err(Error::config(format!(
                    "sample {i}: label {} not below class count {class_count}",
                    s.label
                )));
            }
            if s.features.is_empty() || s.dim() != width || Some(s.layout) != layout {
                return Err(Error::config(format!(
                    "sample {i}: inconsistent feature payload"
                )));
            }
            if let FeatureLayout::Grid {
                electrodes,
                timesteps,
            } = s.layout
            {
                if electrodes * timesteps != s.dim() {
                    return Err(Error::config(format!("sample {i}: grid shape mismatch")));
                }
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("sample {i}: non-finite feature")));
            }
            if s.t_index >= 0 && time_index.insert((s.domain_id, s.t_index), i).is_some() {
                return Err(Error::config(format!(
                    "sample {i}: duplicate t_index {} in domain {}",
                    s.t_index, s.domain_id
                )));
            }
            domain_index.entry(s.domain_id).or_default().push(i);
        }
        Ok(Self {
            samples,
            class_count,
            domain_index,
            time_index,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Feature width (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Sample::dim)
    }

    pub fn layout(&self) -> Option<FeatureLayout> {
        self.samples.first().map(|s| s.layout)
    }

    /// Domain ids in ascending order.
    pub fn domains(&self) -> Vec<u32> {
        self.domain_index.keys().copied().collect()
    }

    pub fn domain_indices(&self, domain: u32) -> &[usize] {
        self.domain_index.get(&domain).map_or(&[], Vec::as_slice)
    }

    /// Position of the sample with the given `(domain, t_index)`.
    pub fn position_of(&self, domain: u32, t_index: i64) -> Option<usize> {
        self.time_index.get(&(domain, t_index)).copied()
    }

    /// New dataset holding the listed samples, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(samples, self.class_count).expect("subset of a valid dataset is valid")
    }

    /// Samples whose domain is in `domains`, in dataset order.
    pub fn filter_domains(&self, domains: &[u32]) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| domains.contains(&self.samples[i].domain_id))
            .collect();
        self.subset(&idx)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Fraction of samples per class.
    pub fn class_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        let n = self.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}
