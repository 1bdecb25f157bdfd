use super::*;
use crate::data::{generate_synthetic, SyntheticSpec};

fn small_data(seed: u64) -> (Dataset, Dataset, TeacherRecord) {
    let (ds, teacher) = generate_synthetic(&SyntheticSpec {
        samples_per_domain: 60,
        dim: 16,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let (train, val) = stratified_split(&ds, 0.1, seed).unwrap();
    (train, val, teacher)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: 6,
        patience: 3,
        warmup_epochs: 2,
        hidden: vec![16, 8],
        gate_dim: 4,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn early_stopping_fires_after_patience_stale_epochs() {
    let mut s = EarlyStopping::new(1);
    let metrics = [0.5, 0.6, 0.7, 0.7, 0.6];
    let mut stopped_at = None;
    for (e, &m) in metrics.iter().enumerate() {
        s.observe(e + 1, m);
        if s.should_stop() {
            stopped_at = Some(e + 1);
            break;
        }
    }
    assert_eq!(stopped_at, Some(4));
    assert_eq!(s.best(), Some((3, 0.7)));
}

#[test]
fn ties_keep_the_earlier_epoch() {
    let mut s = EarlyStopping::new(5);
    assert!(s.observe(1, 0.8));
    assert!(!s.observe(2, 0.8));
    assert_eq!(s.best(), Some((1, 0.8)));
}

#[test]
fn identical_runs_produce_identical_histories() {
    let (train_set, val, teacher) = small_data(0);
    let config = small_config();
    let a = train::<f64, _>(&train_set, &val, &config, Some(&teacher), |_, _| Ok(())).unwrap();
    let b = train::<f64, _>(&train_set, &val, &config, Some(&teacher), |_, _| Ok(())).unwrap();
    let lines = |h: &[EpochRecord]| h.iter().map(EpochRecord::to_json_line).collect::<String>();
    assert_eq!(lines(&a.history), lines(&b.history));
    assert_eq!(a.models, b.models);
}

#[test]
fn records_are_finite_and_loads_sum_to_k() {
    let (train_set, val, teacher) = small_data(1);
    let out = train::<f64, _>(&train_set, &val, &small_config(), Some(&teacher), |_, _| {
        Ok(())
    })
    .unwrap();
    assert!(out.initial_alignment.is_some());
    for r in &out.history {
        assert!(r
            .shared_losses
            .values()
            .chain(r.routed_losses.values())
            .all(|v| v.is_finite()));
        let load = &r.routing.as_ref().unwrap().expert_load;
        assert!((load.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.mutual, r.epoch > 2);
        assert!(r.eps_shared.unwrap().is_finite());
        assert_eq!(r.pairs.self_mask, train_set.len());
    }
    assert!(out.history[2].shared_losses.contains_key("s_from_r"));
    assert!(out.history[1].routed_losses.contains_key("ce"));
}

#[test]
fn best_models_reproduce_best_validation_accuracy() {
    let (train_set, val, _) = small_data(2);
    let out = train::<f64, _>(&train_set, &val, &small_config(), None, |_, _| Ok(())).unwrap();
    let (_, metric) = validate_pair(&out.models, &val, Branches::Full).unwrap();
    assert_eq!(metric, out.best_metric);
    assert_eq!(out.history[out.best_epoch - 1].monitored, out.best_metric);
}

#[test]
fn ablations_leave_the_other_model_untouched() {
    let (train_set, val, _) = small_data(3);
    for branches in [Branches::SharedOnly, Branches::RoutedOnly] {
        let config = TrainConfig {
            branches,
            ..small_config()
        };
        let init = init_models::<f64>(&config, train_set.dim(), 2).unwrap();
        let out = train::<f64, _>(&train_set, &val, &config, None, |_, _| Ok(())).unwrap();
        match branches {
            Branches::SharedOnly => {
                assert_eq!(out.models.routed, init.routed);
                assert_ne!(out.models.shared, init.shared);
                assert!(out.history[0].routing.is_none());
            }
            _ => {
                assert_eq!(out.models.shared, init.shared);
                assert!(out.history[0].shared_losses.is_empty());
            }
        }
        assert!(out.history.iter().all(|r| !r.mutual));
    }
}

#[test]
fn partner_update_leaves_guide_bitwise_unchanged() {
    let (train_set, _, _) = small_data(4);
    let config = small_config();
    let pair = init_models::<f64>(&config, train_set.dim(), 2).unwrap();
    let samples: Vec<&Sample> = train_set.samples().iter().take(32).collect();
    let batch = make_batch::<f64>(&samples, None);
    let regs = crate::losses::Regularizers {
        jel: false,
        ..Default::default()
    };
    let s = SharedPass::new(&pair.shared, &batch, &regs).unwrap();
    let r = RoutedPass::new(&pair.routed, &batch).unwrap();
    let shared_before = pair.shared.flatten();
    let (_, routed_grads) = r.objective(LossMode::Mutual(s.per_sample()), &regs);
    let mut routed = pair.routed.clone();
    AdamState::new(&routed, config.adam())
        .update(&mut routed, &routed_grads)
        .unwrap();
    assert_ne!(routed, pair.routed);
    assert_eq!(pair.shared.flatten(), shared_before);
}

#[test]
fn observer_sees_every_epoch_and_each_new_best() {
    let (train_set, val, _) = small_data(5);
    let mut seen = Vec::new();
    let out = train::<f64, _>(&train_set, &val, &small_config(), None, |r, best| {
        seen.push((r.epoch, r.improved, best.is_some()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), out.history.len());
    assert!(seen.iter().all(|(_, i, b)| i == b));
    assert!(seen[0].1);
}

#[test]
fn single_domain_training_is_rejected() {
    let (train_set, val, _) = small_data(6);
    let one = train_set.filter_domains(&[0]);
    let err = train::<f64, _>(&one, &val, &small_config(), None, |_, _| Ok(())).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
