use mgec::data::{load_dataset, retrieve_neighbor, save_csv, DataFormat, Dataset, Sample};
use mgec::evaluation::{accuracy, balanced_accuracy};
use mgec::losses::jel_loss;
use mgec::models::RouterState;
use mgec::numerics::{softmax, Matrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_in(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(v in vec_in(1..12), shift in -100.0..100.0f64) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn routing_is_k_sparse_normalized_and_scale_free(
        seed in 0u64..1000,
        top_k in 1usize..=5,
        z in prop::collection::vec(-3.0..3.0f64, 8),
        scale in 1e-3..1e3f64,
    ) {
        let router = RouterState::<f64>::new(8, 4, 5, top_k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let r = router.route(&z).unwrap();
        prop_assert_eq!(r.weights.iter().filter(|&&w| w > 0.0).count(), top_k);
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let scaled: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let s = router.route(&scaled).unwrap();
        prop_assert_eq!(&r.selected, &s.selected);
        for (a, b) in r.weights.iter().zip(&s.weights) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jel_ignores_positive_rescaling(
        a in prop::collection::vec(-5.0..5.0f64, 6),
        b in prop::collection::vec(-5.0..5.0f64, 6),
        sa in 0.01..100.0f64,
        sb in 0.01..100.0f64,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let m = |v: &[f64], s: f64| Matrix::from_vec(1, 6, v.iter().map(|x| x * s).collect()).unwrap();
        let base = jel_loss(&m(&a, 1.0), &m(&b, 1.0)).value;
        let scaled = jel_loss(&m(&a, sa), &m(&b, sb)).value;
        prop_assert!((base - scaled).abs() < 1e-12);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&base));
    }

    #[test]
    fn csv_save_load_is_identity(
        rows in prop::collection::vec((vec_in(3..4), 0usize..3, 0u32..4), 1..20),
    ) {
        let samples: Vec<Sample> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (f, l, d))| Sample::flat(f, l, d, i as i64))
            .collect();
        let ds = Dataset::new(samples, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_dataset(&path, DataFormat::Csv).unwrap();
        prop_assert_eq!(back.samples(), ds.samples());
    }

    #[test]
    fn neighbor_retrieval_inverts_the_time_shift(len in 2usize..30, offset in 1i64..4) {
        let samples = (0..len)
            .map(|t| Sample::flat(vec![t as f64], 1, 2, t as i64))
            .collect();
        let ds = Dataset::new(samples, 2).unwrap();
        for s in ds.samples() {
            let n = retrieve_neighbor(&ds, s, offset);
            if s.t_index >= offset {
                prop_assert_eq!(n.map(|n| n.t_index + offset), Some(s.t_index));
            } else {
                prop_assert!(n.is_none());
            }
        }
    }

    #[test]
    fn balanced_accuracy_equals_accuracy_on_balanced_sets(
        per_class in 1usize..20,
        preds in prop::collection::vec(0usize..3, 60),
    ) {
        let labels: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let preds = &preds[..labels.len()];
        prop_assert!((balanced_accuracy(preds, &labels, 3) - accuracy(preds, &labels)).abs() < 1e-12);
    }
}
