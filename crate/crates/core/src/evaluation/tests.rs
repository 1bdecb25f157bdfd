use super::*;
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::training::{Branches, TrainConfig};

fn tiny_spec() -> SyntheticSpec {
    SyntheticSpec {
        samples_per_domain: 40,
        dim: 8,
        ..SyntheticSpec::default()
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: 3,
        patience: 2,
        warmup_epochs: 1,
        hidden: vec![8],
        gate_dim: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn run_fold_scores_the_held_out_domain() {
    let (ds, teacher) = generate_synthetic(&tiny_spec()).unwrap();
    let folds = lodo_folds(&ds).unwrap();
    let (report, outcome) = run_fold::<f64, _>(
        &ds,
        &folds[2],
        &tiny_config(),
        Branches::Full,
        Some(&teacher),
        |_, _| Ok(()),
    )
    .unwrap();
    assert_eq!(report.test_domains, vec![2]);
    assert_eq!(report.primary, report.heads.fused.unwrap());
    assert!(report.heads.shared.is_some() && report.heads.routed.is_some());
    assert!((0.0..=1.0).contains(&report.primary.accuracy));
    assert_eq!(report.epochs_run, outcome.history.len());

    let (shared, _) = run_fold::<f64, _>(
        &ds,
        &folds[2],
        &tiny_config(),
        Branches::SharedOnly,
        None,
        |_, _| Ok(()),
    )
    .unwrap();
    assert!(shared.heads.routed.is_none() && shared.heads.fused.is_none());
    assert_eq!(shared.primary, shared.heads.shared.unwrap());
}

#[test]
fn training_errors_carry_the_fold_id() {
    let (ds, _) = generate_synthetic(&tiny_spec()).unwrap();
    let fold = Fold {
        id: 3,
        train_domains: vec![0],
        test_domains: vec![1],
    };
    match run_fold::<f64, _>(&ds, &fold, &tiny_config(), Branches::Full, None, |_, _| {
        Ok(())
    }) {
        Err(crate::Error::Fold { fold: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sweep_bookkeeping_and_parallel_equals_serial() {
    let grid = [0.0, 1.0];
    let seeds = [0, 1];
    let ablations = Branches::ALL;
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| lambda_sweep(&tiny_spec(), &grid, &seeds, &tiny_config(), &ablations))
        .unwrap();
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| lambda_sweep(&tiny_spec(), &grid, &seeds, &tiny_config(), &ablations))
        .unwrap();
    assert_eq!(serial.rows.len(), 2 * 2 * 5 * 3);
    assert_eq!(serial.cells.len(), 2 * 3);
    assert!(serial.cells.iter().all(|c| c.per_seed_accuracy.len() == 2));
    assert_eq!(serial.cells, parallel.cells);
    assert_eq!(serial.rows, parallel.rows);

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    serial.write_csv(&csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 1 + serial.rows.len());
    assert!(text.starts_with("lambda,seed,fold,ablation,accuracy,balanced_accuracy\n"));
    let json_path = dir.path().join("sweep.json");
    serial.save_json(&json_path).unwrap();
    let back: SweepReport =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(back, serial);
}

#[test]
fn bad_grids_are_rejected() {
    for grid in [vec![], vec![0.5, 0.2], vec![0.0, 1.5]] {
        let err =
            lambda_sweep(&tiny_spec(), &grid, &[0], &tiny_config(), &[Branches::Full]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn mean_std_known_values() {
    assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s - 1.0).abs() < 1e-15);
}
