use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{accuracy, balanced_accuracy, Fold};
use crate::data::{Dataset, TeacherRecord};
use crate::error::{Error, Result};
use crate::models::ModelPair;
use crate::numerics::Scalar;
use crate::training::{
    infer, stratified_split, train, Branches, EpochRecord, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

impl Metrics {
    pub fn of(predictions: &[usize], labels: &[usize], class_count: usize) -> Self {
        Self {
            accuracy: accuracy(predictions, labels),
            balanced_accuracy: balanced_accuracy(predictions, labels, class_count),
        }
    }
}

/// Held-out metrics of every head a run trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub shared: Option<Metrics>,
    pub routed: Option<Metrics>,
    pub fused: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_domains: Vec<u32>,
    pub ablation: Branches,
    pub seed: u64,
    pub heads: HeadMetrics,
    /// The head the ablation is judged by (fused for full runs).
    pub primary: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Primary accuracy below `1/C − 0.05`.
    pub below_chance: bool,
    /// Fused accuracy fell below both branch heads.
    pub fusion_below_both: bool,
    pub runtime_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
}

/// Held-out metrics for `models` on `test`.
pub fn test_metrics<T: Scalar>(
    models: &ModelPair<T>,
    test: &Dataset,
    ablation: Branches,
) -> Result<(HeadMetrics, Metrics)> {
    let preds = infer(
        models,
        test,
        ablation.trains_shared(),
        ablation.trains_routed(),
    )?
    .predictions()?;
    let labels = test.labels();
    let c = test.class_count();
    let m = |p: &Option<Vec<usize>>| p.as_ref().map(|p| Metrics::of(p, &labels, c));
    let heads = HeadMetrics {
        shared: m(&preds.shared),
        routed: m(&preds.routed),
        fused: m(&preds.fused),
    };
    Ok((heads, Metrics::of(preds.primary(ablation), &labels, c)))
}

/// Trains `ablation` on the fold's training domains (a stratified slice
/// held out for validation) and scores the held-out domains.
pub fn run_fold<T: Scalar, F>(
    dataset: &Dataset,
    fold: &Fold,
    config: &TrainConfig,
    ablation: Branches,
    teacher: Option<&TeacherRecord>,
    observer: F,
) -> Result<(FoldReport, TrainOutcome<T>)>
where
    F: FnMut(&EpochRecord, Option<&ModelPair<T>>) -> Result<()>,
{
    let start = Instant::now();
    let wrap = |e: Error| Error::Fold {
        fold: fold.id,
        source: Box::new(e),
    };
    let (train_all, test) = fold.split(dataset);
    if test.is_empty() || train_all.is_empty() {
        return Err(wrap(Error::config("fold has an empty side")));
    }
    let (train_set, val) =
        stratified_split(&train_all, config.val_fraction, config.seed).map_err(wrap)?;
    let config = TrainConfig {
        branches: ablation,
        ..config.clone()
    };
    let outcome = train::<T, F>(&train_set, &val, &config, teacher, observer).map_err(wrap)?;
    let (heads, primary) = test_metrics(&outcome.models, &test, ablation).map_err(wrap)?;

    let chance = 1.0 / dataset.class_count() as f64;
    let below_chance = primary.accuracy < chance - 0.05;
    if below_chance {
        log::warn!(
            "fold {}: {} accuracy {:.3} is below chance",
            fold.id,
            ablation.label(),
            primary.accuracy
        );
    }
    let fusion_below_both = match (&heads.shared, &heads.routed, &heads.fused) {
        (Some(s), Some(r), Some(f)) => f.accuracy < s.accuracy.min(r.accuracy),
        _ => false,
    };
    if fusion_below_both {
        log::warn!("fold {}: fused accuracy below both branches", fold.id);
    }
    let report = FoldReport {
        fold: fold.id,
        test_domains: fold.test_domains.clone(),
        ablation,
        seed: config.seed,
        heads,
        primary,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        below_chance,
        fusion_below_both,
        runtime_secs: start.elapsed().as_secs_f64(),
        history: outcome.history.clone(),
    };
    Ok((report, outcome))
}
