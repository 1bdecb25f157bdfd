use serde::{Deserialize, Serialize};

use crate::data::AugmentSpec;
use crate::error::{Error, Result};
use crate::losses::Regularizers;
use crate::models::ModelConfig;
use crate::numerics::AdamConfig;

/// Which models a run trains.
#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    /// Both models with mutual guidance after warm-up.
    Full,
    /// The shared model alone on its warm-up objective ("w/o R").
    SharedOnly,
    /// The routed model alone on its warm-up objective ("w/o S").
    RoutedOnly,
}

impl Branches {
    pub const ALL: [Branches; 3] = [Branches::Full, Branches::SharedOnly, Branches::RoutedOnly];

    pub fn trains_shared(self) -> bool {
        self != Branches::RoutedOnly
    }

    pub fn trains_routed(self) -> bool {
        self != Branches::SharedOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            Branches::Full => "full",
            Branches::SharedOnly => "shared_only",
            Branches::RoutedOnly => "routed_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Number of routed experts `M`.
    pub experts: usize,
    pub top_k: usize,
    pub gate_dim: usize,
    pub hidden: Vec<usize>,
    pub augment: AugmentSpec,
    pub regularizers: Regularizers,
    pub branches: Branches,
    /// Fraction of the training domains held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            lr: 1e-4,
            weight_decay: 5e-4,
            warmup_epochs: 5,
            experts: 5,
            top_k: 1,
            gate_dim: 32,
            hidden: vec![128, 64],
            augment: AugmentSpec::default(),
            regularizers: Regularizers::default(),
            branches: Branches::Full,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return Err(Error::config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        self.augment.validate()?;
        self.model_config(1, 2).validate()
    }

    /// True when the mutual phase starts before `max_epochs`.
    pub fn mutual_phase_reached(&self) -> bool {
        self.warmup_epochs < self.max_epochs
    }

    /// True when early stopping can fire before `max_epochs`.
    pub fn early_stopping_active(&self) -> bool {
        self.patience < self.max_epochs
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn model_config(&self, input_dim: usize, class_count: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden.clone(),
            class_count,
            experts: self.experts,
            top_k: self.top_k,
            gate_dim: self.gate_dim,
        }
    }
}
