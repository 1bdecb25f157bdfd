use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{finite_diff_check, FdOptions};

fn rows(r: &[&[f64]]) -> Matrix<f64> {
    Matrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn one_hot(m: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[j] = 1.0;
    v
}

#[test]
fn cross_entropy_reference_values() {
    let (mean, per) = ce_loss(&rows(&[&[1000.0, 0.0]]), &[0]);
    assert_eq!(mean, 0.0);
    assert_eq!(per, vec![0.0]);
    let (mean, _) = ce_loss(&rows(&[&[0.3, 0.3]]), &[1]);
    assert!((mean - 2f64.ln()).abs() < 1e-15);
    // per-sample losses 0, ln 2, 2 ln 2 → mean ln 2
    let l = rows(&[&[1000.0, 0.0], &[0.0, 0.0], &[0.0, 3f64.ln()]]);
    let (mean, per) = ce_loss(&l, &[0, 1, 0]);
    assert_eq!(per[0], 0.0);
    assert!((per[1] - 2f64.ln()).abs() < 1e-15);
    assert!((per[2] - 2.0 * 2f64.ln()).abs() < 1e-15);
    assert!((mean - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn cross_entropy_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = [0, 2, 1, 2];
    let d = [0.25, 0.5, 1.0, 0.1];
    let logits = Matrix::from_vec(4, 3, data.clone()).unwrap();
    let grad = ce_backward(&logits, &labels, &d);
    let f = |p: &[f64]| {
        let (_, per) = ce_loss(&Matrix::from_vec(4, 3, p.to_vec()).unwrap(), &labels);
        per.iter().zip(&d).map(|(l, w)| l * w).sum::<f64>()
    };
    let r = finite_diff_check(f, &data, grad.as_slice(), &FdOptions::default(), &mut rng);
    assert!(r.pass, "{r:?}");
}

#[test]
fn jel_reference_values() {
    let a = rows(&[&[1.0, 2.0], &[0.5, -1.0]]);
    assert!(jel_loss(&a, &a).value.abs() < 1e-12);
    let orth = rows(&[&[-2.0, 1.0], &[2.0, 1.0]]);
    assert!((jel_loss(&a, &orth).value - 1.0).abs() < 1e-12);
    let anti = rows(&[&[-1.0, -2.0], &[-0.5, 1.0]]);
    assert!((jel_loss(&a, &anti).value - 2.0).abs() < 1e-12);
}

#[test]
fn jel_skips_zero_norm_pairs() {
    let a = rows(&[&[0.0, 0.0], &[1.0, 0.0]]);
    let b = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let j = jel_loss(&a, &b);
    assert_eq!((j.used, j.skipped), (1, 1));
    assert!((j.value - 1.0).abs() < 1e-12);
    let zero = rows(&[&[0.0, 0.0]]);
    let j = jel_loss(&zero, &zero);
    assert!(j.all_skipped());
    assert_eq!(j.value, 0.0);
}

#[test]
fn jel_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d) = (5, 4);
    let x: Vec<f64> = (0..2 * n * d)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let split = |p: &[f64]| {
        (
            Matrix::from_vec(n, d, p[..n * d].to_vec()).unwrap(),
            Matrix::from_vec(n, d, p[n * d..].to_vec()).unwrap(),
        )
    };
    let (a, b) = split(&x);
    let j = jel_loss(&a, &b);
    let grad = [j.grad_neighbor.as_slice(), j.grad_current.as_slice()].concat();
    let r = finite_diff_check(
        |p: &[f64]| {
            let (a, b) = split(p);
            jel_loss(&a, &b).value
        },
        &x,
        &grad,
        &FdOptions::default(),
        &mut rng,
    );
    assert!(r.pass, "{r:?}");
}

#[test]
fn specialization_reference_values() {
    let w = rows(&[&one_hot(5, 1), &one_hot(5, 1), &one_hot(5, 3)]);
    assert_eq!(sl_loss(&w, &[0, 0, 1]).value, 0.0);
    let w = rows(&[&[0.2; 5]]);
    assert!((sl_loss(&w, &[7]).value - 5f64.ln()).abs() < 1e-12);
    let w = rows(&[&one_hot(3, 0), &one_hot(3, 1)]);
    assert!((sl_loss(&w, &[4, 4]).value - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn specialization_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, m) = (6, 4);
    let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.05..1.0)).collect();
    let domains = [0, 1, 0, 2, 1, 0];
    let grad = sl_loss(&Matrix::from_vec(n, m, x.clone()).unwrap(), &domains).grad;
    let r = finite_diff_check(
        |p: &[f64]| sl_loss(&Matrix::from_vec(n, m, p.to_vec()).unwrap(), &domains).value,
        &x,
        grad.as_slice(),
        &FdOptions::default(),
        &mut rng,
    );
    assert!(r.pass, "{r:?}");
}

#[test]
fn balance_reference_values() {
    let m = 5;
    let collapsed = rows(&[one_hot(m, 0).as_slice(); 8]);
    assert_eq!(bl_loss(&collapsed).value, 5.0);
    let spread: Vec<Vec<f64>> = (0..m).map(|j| one_hot(m, j)).collect();
    let spread = Matrix::from_rows(&spread).unwrap();
    assert!((bl_loss(&spread).value - 1.0).abs() < 1e-15);
}

#[test]
fn balance_of_uniform_top2_is_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, m) = (10_000, 5);
    let mut w = Matrix::zeros(n, m);
    for i in 0..n {
        let a = rng.random_range(0..m);
        let mut b = rng.random_range(0..m - 1);
        if b >= a {
            b += 1;
        }
        w[(i, a)] = 0.5;
        w[(i, b)] = 0.5;
    }
    let v: f64 = bl_loss(&w).value;
    assert!((v - 2.0).abs() < 0.05, "{v}");
}

#[test]
fn balance_lies_between_balanced_and_collapsed() {
    for m in 2..=3usize {
        for n in 1..=6usize {
            let total = m.pow(n as u32);
            for code in 0..total {
                let mut c = code;
                let mut w = Matrix::zeros(n, m);
                let mut counts = vec![0; m];
                for i in 0..n {
                    w[(i, c % m)] = 1.0;
                    counts[c % m] += 1;
                    c /= m;
                }
                let v: f64 = bl_loss(&w).value;
                let collapsed = counts.contains(&n);
                let balanced = counts.iter().all(|&k| k * m == n);
                if collapsed {
                    assert!((v - m as f64).abs() < 1e-12);
                } else if balanced {
                    assert!((v - 1.0).abs() < 1e-12);
                } else {
                    assert!(
                        v > 1.0 && v < m as f64,
                        "n={n} m={m} counts={counts:?} v={v}"
                    );
                }
            }
        }
    }
}

#[test]
fn balance_gradient_flows_through_gate_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, m) = (7, 3);
    let sel: Vec<f64> = (0..n * m)
        .map(|k| if k % 3 == (k / 3) % 2 { 0.6 } else { 0.0 })
        .collect();
    let sel = Matrix::from_vec(n, m, sel).unwrap();
    let gate: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..1.0)).collect();
    let grad = balance_loss(&sel, &Matrix::from_vec(n, m, gate.clone()).unwrap()).grad;
    let r = finite_diff_check(
        |p: &[f64]| balance_loss(&sel, &Matrix::from_vec(n, m, p.to_vec()).unwrap()).value,
        &gate,
        grad.as_slice(),
        &FdOptions::default(),
        &mut rng,
    );
    assert!(r.pass, "{r:?}");
}

#[test]
fn mutual_reference_values() {
    let own = [0.3f64, 1.2, 0.05];
    let (v, _) = mutual_weighted_loss(&own, &own);
    let mean: f64 = own.iter().sum::<f64>() / 3.0;
    assert!((v - 2.0 * mean).abs() < 1e-12);
    assert!((mutual_weight(0.7f64, 0.7) - 2.0).abs() < 1e-12);

    let (v, _): (f64, _) = mutual_weighted_loss(&[0.5 + 3f64.ln()], &[0.5]);
    assert!((v - 4.0 * (0.5 + 3f64.ln())).abs() < 1e-12);

    let (v, g): (f64, Vec<f64>) = mutual_weighted_loss(&[0.2, 0.4], &[40.0, 50.0]);
    assert!((v - 0.3).abs() < 1e-10);
    assert!(g.iter().all(|d| (d - 0.5).abs() < 1e-10));
}

#[test]
fn mutual_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let own: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..3.0)).collect();
    let guide: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..3.0)).collect();
    let (_, g) = mutual_weighted_loss(&own, &guide);
    let r = finite_diff_check(
        |p: &[f64]| mutual_weighted_loss(p, &guide).0,
        &own,
        &g,
        &FdOptions::default(),
        &mut rng,
    );
    assert!(r.pass, "{r:?}");
}
