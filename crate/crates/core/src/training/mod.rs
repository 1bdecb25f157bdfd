//! The co-training loop: warm-up, mutual phase, early stopping.

mod config;
mod diagnostics;
mod pairs;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Branches, TrainConfig};
pub use diagnostics::{
    alignment_errors, coefficient_of_variation, expert_load, infer, input_matrix, routing_entropy,
    BranchPredictions, Inference,
};
pub use pairs::{jel_batch_pairs, stratified_split, PairStats};

use crate::data::{Dataset, Sample, TeacherRecord};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::losses::{Batch, BatchLossReport, LossMode, RoutedPass, SharedPass};
use crate::models::ModelPair;
use crate::numerics::{AdamState, ParamSet, Scalar};

/// Validation accuracy of each available branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchAccuracy {
    pub shared: Option<f64>,
    pub routed: Option<f64>,
    pub fused: Option<f64>,
}

/// Router behaviour over the training set after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingStats {
    /// Fraction of samples selecting each expert; sums to K.
    pub expert_load: Vec<f64>,
    pub load_cv: f64,
    /// Mean per-domain entropy of the averaged sparse routing weights.
    pub routing_entropy: f64,
    /// Same, over the dense gate probabilities.
    pub gate_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mutual: bool,
    /// Sample-weighted means of each loss component, plus `total`.
    pub shared_losses: BTreeMap<String, f64>,
    pub routed_losses: BTreeMap<String, f64>,
    /// Per-batch totals in training order.
    pub shared_batch_totals: Vec<f64>,
    pub routed_batch_totals: Vec<f64>,
    pub val_accuracy: BranchAccuracy,
    /// The early-stopping metric.
    pub monitored: f64,
    pub improved: bool,
    pub eps_shared: Option<f64>,
    pub eps_routed: Option<f64>,
    pub routing: Option<RoutingStats>,
    pub pairs: PairStats,
    pub prototype_resets: Vec<usize>,
}

/// Patience counter. Only strict improvements reset it, so ties keep the
/// earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch's metric; true when it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        match self.best {
            Some((_, b)) if metric <= b => {
                self.stale += 1;
                false
            }
            _ => {
                self.best = Some((epoch, metric));
                self.stale = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.best.is_some() && self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best validation epoch.
    pub models: ModelPair<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// `(ε_S, ε_R)` before the first update.
    pub initial_alignment: Option<(f64, f64)>,
}

/// Initial parameters for a run; both models are always drawn so that
/// ablations start from the same weights as the full run.
pub fn init_models<T: Scalar>(
    config: &TrainConfig,
    input_dim: usize,
    class_count: usize,
) -> Result<ModelPair<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    ModelPair::new(&config.model_config(input_dim, class_count), &mut rng)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn make_batch<T: Scalar>(samples: &[&Sample], pairs: Option<&[Sample]>) -> Batch<T> {
    Batch {
        x: input_matrix(samples),
        labels: samples.iter().map(|s| s.label).collect(),
        domains: samples.iter().map(|s| s.domain_id).collect(),
        pair: pairs.map(|p| input_matrix(&p.iter().collect::<Vec<_>>())),
    }
}

fn accumulate(sums: &mut BTreeMap<String, f64>, report: &BatchLossReport, weight: f64) {
    for (k, v) in &report.components {
        *sums.entry(k.clone()).or_default() += v * weight;
    }
    *sums.entry("total".into()).or_default() += report.total * weight;
}

fn check_finite(
    report: &BatchLossReport,
    grads_ok: bool,
    branch: &'static str,
    epoch: usize,
    batch: usize,
) -> Result<()> {
    if report.total.is_finite() && grads_ok {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            branch,
            epoch,
            batch,
        })
    }
}

/// Validation accuracies and the monitored metric for `pair`.
pub fn validate_pair<T: Scalar>(
    pair: &ModelPair<T>,
    val: &Dataset,
    branches: Branches,
) -> Result<(BranchAccuracy, f64)> {
    let preds = infer(
        pair,
        val,
        branches.trains_shared(),
        branches.trains_routed(),
    )?
    .predictions()?;
    let labels = val.labels();
    let acc = |p: &Option<Vec<usize>>| p.as_ref().map(|p| accuracy(p, &labels));
    let out = BranchAccuracy {
        shared: acc(&preds.shared),
        routed: acc(&preds.routed),
        fused: acc(&preds.fused),
    };
    Ok((out, accuracy(preds.primary(branches), &labels)))
}

fn routing_stats<T: Scalar>(pair: &ModelPair<T>, train: &Dataset) -> Result<RoutingStats> {
    let out = infer(pair, train, false, true)?;
    let domains: Vec<u32> = train.samples().iter().map(|s| s.domain_id).collect();
    let load = expert_load(&out.routing, pair.routed.router.expert_count());
    Ok(RoutingStats {
        load_cv: coefficient_of_variation(&load),
        expert_load: load,
        routing_entropy: routing_entropy(&out.routing, &domains, false),
        gate_entropy: routing_entropy(&out.routing, &domains, true),
    })
}

/// Trains from freshly initialized models. See [`train_from`].
pub fn train<T: Scalar, F>(
    train_set: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    teacher: Option<&TeacherRecord>,
    observer: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&EpochRecord, Option<&ModelPair<T>>) -> Result<()>,
{
    let pair = init_models(config, train_set.dim(), train_set.class_count())?;
    train_from(pair, train_set, val, config, teacher, observer)
}

/// Runs the training loop on `pair`.
///
/// `observer` sees every epoch record as it is produced, together with
/// the parameters whenever that epoch is a new best.
pub fn train_from<T: Scalar, F>(
    mut pair: ModelPair<T>,
    train_set: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    teacher: Option<&TeacherRecord>,
    mut observer: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&EpochRecord, Option<&ModelPair<T>>) -> Result<()>,
{
    config.validate()?;
    if val.is_empty() {
        return Err(Error::config("validation set is empty"));
    }
    if train_set.domains().len() < 2 {
        return Err(Error::config("training needs at least two domains"));
    }
    if val.dim() != train_set.dim() || val.class_count() != train_set.class_count() {
        return Err(Error::config(
            "training and validation sets disagree on shape",
        ));
    }
    let branches = config.branches;
    let regs = config.regularizers;
    let with_pairs = branches.trains_shared() && regs.jel;
    let align = |p: &ModelPair<T>| -> Result<Option<(f64, f64)>> {
        match (teacher, branches) {
            (Some(t), Branches::Full) => alignment_errors(p, val, t).map(Some),
            _ => Ok(None),
        }
    };

    let mut shared_opt = AdamState::new(&pair.shared, config.adam());
    let mut routed_opt = AdamState::new(&pair.routed, config.adam());
    let mut reinit_rng = ChaCha8Rng::seed_from_u64(config.seed);
    reinit_rng.set_stream(u64::MAX);

    let initial_alignment = align(&pair)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = pair.clone();
    let mut history = Vec::new();
    let samples: Vec<&Sample> = train_set.samples().iter().collect();

    for epoch in 0..config.max_epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order = samples.clone();
        order.shuffle(&mut rng);
        let mutual = branches == Branches::Full && epoch >= config.warmup_epochs;

        let mut shared_sums = BTreeMap::new();
        let mut routed_sums = BTreeMap::new();
        let mut shared_batch_totals = Vec::new();
        let mut routed_batch_totals = Vec::new();
        let mut pair_stats = PairStats::default();
        let mut prototype_resets = Vec::new();

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let pairs = with_pairs.then(|| {
                let (p, stats) = jel_batch_pairs(chunk, train_set, &config.augment, &mut rng);
                pair_stats.add(stats);
                p
            });
            let batch = make_batch::<T>(chunk, pairs.as_deref());
            let weight = chunk.len() as f64 / samples.len() as f64;

            let shared_pass = branches
                .trains_shared()
                .then(|| SharedPass::new(&pair.shared, &batch, &regs))
                .transpose()?;
            let routed_pass = branches
                .trains_routed()
                .then(|| RoutedPass::new(&pair.routed, &batch))
                .transpose()?;

            let shared_step = shared_pass.as_ref().map(|p| {
                let mode = match (&routed_pass, mutual) {
                    (Some(r), true) => LossMode::Mutual(r.per_sample()),
                    _ => LossMode::WarmUp,
                };
                p.objective(mode)
            });
            let routed_step = routed_pass.as_ref().map(|p| {
                let mode = match (&shared_pass, mutual) {
                    (Some(s), true) => LossMode::Mutual(s.per_sample()),
                    _ => LossMode::WarmUp,
                };
                p.objective(mode, &regs)
            });
            drop(shared_pass);
            drop(routed_pass);

            if let Some((report, grads)) = shared_step {
                check_finite(&report, grads.all_finite(), "shared", epoch + 1, b)?;
                shared_opt.update(&mut pair.shared, &grads)?;
                accumulate(&mut shared_sums, &report, weight);
                shared_batch_totals.push(report.total);
            }
            if let Some((report, grads)) = routed_step {
                check_finite(&report, grads.all_finite(), "routed", epoch + 1, b)?;
                routed_opt.update(&mut pair.routed, &grads)?;
                accumulate(&mut routed_sums, &report, weight);
                routed_batch_totals.push(report.total);
                let reset = pair.routed.router.reinit_degenerate(&mut reinit_rng);
                if !reset.is_empty() {
                    log::warn!(
                        "epoch {}: re-initialized degenerate prototypes {reset:?}",
                        epoch + 1
                    );
                    prototype_resets.extend(reset);
                }
            }
        }

        let (val_accuracy, monitored) = validate_pair(&pair, val, branches)?;
        let improved = stopper.observe(epoch + 1, monitored);
        let eps = align(&pair)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            mutual,
            shared_losses: shared_sums,
            routed_losses: routed_sums,
            shared_batch_totals,
            routed_batch_totals,
            val_accuracy,
            monitored,
            improved,
            eps_shared: eps.map(|e| e.0),
            eps_routed: eps.map(|e| e.1),
            routing: branches
                .trains_routed()
                .then(|| routing_stats(&pair, train_set))
                .transpose()?,
            pairs: pair_stats,
            prototype_resets,
        };
        log::debug!(
            "epoch {:>3} monitored {:.4}{}",
            record.epoch,
            record.monitored,
            if improved { " *" } else { "" }
        );
        if improved {
            best = pair.clone();
        }
        observer(&record, improved.then_some(&best))?;
        history.push(record);
        if stopper.should_stop() {
            log::info!("early stop after epoch {}", epoch + 1);
            break;
        }
    }

    let (best_epoch, best_metric) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        models: best,
        history,
        best_epoch,
        best_metric,
        initial_alignment,
    })
}

impl EpochRecord {
    /// One JSON line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize") + "\n"
    }
}

#[cfg(test)]
mod tests;
