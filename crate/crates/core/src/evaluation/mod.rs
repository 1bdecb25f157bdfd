//! Cross-validation folds, metrics, ablation runs and the λ sweep.

mod folds;
mod metrics;
mod run;
mod sweep;

pub use folds::{kfold_by_domain, lodo_folds, Fold};
pub use metrics::{accuracy, balanced_accuracy};
pub use run::{run_fold, test_metrics, FoldReport, HeadMetrics, Metrics};
pub use sweep::{fold_seed, lambda_sweep, mean_std, SweepCell, SweepReport, SweepRow};

#[cfg(test)]
mod tests;
