use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lodo_folds, run_fold, FoldReport};
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::error::{Error, Result};
use crate::training::{Branches, TrainConfig};

/// Training seed for one fold of one data seed. Independent of λ, so runs
/// at different λ are paired.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub ablation: Branches,
    /// Fold-averaged accuracy per seed, in seed order.
    pub per_seed_accuracy: Vec<f64>,
    pub per_seed_balanced_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_balanced_accuracy: f64,
    pub std_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub fold: usize,
    pub ablation: Branches,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub ablations: Vec<Branches>,
    pub template: SyntheticSpec,
    pub config: TrainConfig,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
    /// Per-fold reports without epoch histories.
    pub folds: Vec<FoldReport>,
}

impl SweepReport {
    pub fn cell(&self, lambda: f64, ablation: Branches) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.lambda == lambda && c.ablation == ablation)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::io(path, e.into());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record([
            "lambda",
            "seed",
            "fold",
            "ablation",
            "accuracy",
            "balanced_accuracy",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.lambda.to_string(),
                r.seed.to_string(),
                r.fold.to_string(),
                r.ablation.label().to_string(),
                r.accuracy.to_string(),
                r.balanced_accuracy.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("lambda grid is empty"));
    }
    if grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::config(format!(
            "lambda grid must lie in [0, 1], got {grid:?}"
        )));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "lambda grid must be strictly ascending, got {grid:?}"
        )));
    }
    Ok(())
}

/// Regenerates the benchmark at every (λ, seed), runs every ablation on
/// every leave-one-domain-out fold and aggregates.
///
/// Runs execute on the current rayon pool. Results are collected in task
/// order, so the report does not depend on scheduling.
pub fn lambda_sweep(
    template: &SyntheticSpec,
    grid: &[f64],
    seeds: &[u64],
    config: &TrainConfig,
    ablations: &[Branches],
) -> Result<SweepReport> {
    validate_grid(grid)?;
    if seeds.is_empty() || ablations.is_empty() {
        return Err(Error::config(
            "sweep needs at least one seed and one ablation",
        ));
    }
    config.validate()?;

    let cells: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let data = cells
        .par_iter()
        .map(|&(lambda, seed)| {
            let spec = SyntheticSpec {
                lambda,
                seed,
                ..template.clone()
            };
            let (ds, teacher) = generate_synthetic(&spec)?;
            let folds = lodo_folds(&ds)?;
            Ok((ds, teacher, folds))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::new();
    for (c, (_, _, folds)) in data.iter().enumerate() {
        for f in 0..folds.len() {
            for &a in ablations {
                tasks.push((c, f, a));
            }
        }
    }
    log::info!("sweep: {} training runs", tasks.len());
    let mut reports = tasks
        .par_iter()
        .map(|&(c, f, ablation)| {
            let (ds, teacher, folds) = &data[c];
            let (_, seed) = cells[c];
            let config = TrainConfig {
                seed: fold_seed(seed, f),
                ..config.clone()
            };
            let (report, _) =
                run_fold::<f64, _>(ds, &folds[f], &config, ablation, Some(teacher), |_, _| {
                    Ok(())
                })?;
            log::debug!(
                "lambda {} seed {seed} fold {f} {}: {:.4}",
                cells[c].0,
                ablation.label(),
                report.primary.accuracy
            );
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.iter_mut().for_each(|r| r.history.clear());

    let mut rows = Vec::with_capacity(tasks.len());
    for (&(c, f, ablation), r) in tasks.iter().zip(&reports) {
        rows.push(SweepRow {
            lambda: cells[c].0,
            seed: cells[c].1,
            fold: f,
            ablation,
            accuracy: r.primary.accuracy,
            balanced_accuracy: r.primary.balanced_accuracy,
        });
    }

    let mut out_cells = Vec::new();
    for &lambda in grid {
        for &ablation in ablations {
            let (mut acc, mut bal) = (Vec::new(), Vec::new());
            for &seed in seeds {
                let mine: Vec<&SweepRow> = rows
                    .iter()
                    .filter(|r| r.lambda == lambda && r.seed == seed && r.ablation == ablation)
                    .collect();
                let n = mine.len() as f64;
                acc.push(mine.iter().map(|r| r.accuracy).sum::<f64>() / n);
                bal.push(mine.iter().map(|r| r.balanced_accuracy).sum::<f64>() / n);
            }
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_balanced_accuracy, std_balanced_accuracy) = mean_std(&bal);
            out_cells.push(SweepCell {
                lambda,
                ablation,
                per_seed_accuracy: acc,
                per_seed_balanced_accuracy: bal,
                mean_accuracy,
                std_accuracy,
                mean_balanced_accuracy,
                std_balanced_accuracy,
            });
        }
    }

    Ok(SweepReport {
        grid: grid.to_vec(),
        seeds: seeds.to_vec(),
        ablations: ablations.to_vec(),
        template: template.clone(),
        config: config.clone(),
        cells: out_cells,
        rows,
        folds: reports,
    })
}
