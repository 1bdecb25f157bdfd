//! Acceptance run: one PASS/FAIL line per criterion. Runs for roughly
//! twenty-five minutes on one core; failures are reported, not panicked on.

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;
use std::time::Instant;

use mgec::data::{
    apply_mask, generate_synthetic, AugmentSpec, FeatureLayout, Sample, SyntheticSpec,
};
use mgec::evaluation::{fold_seed, lambda_sweep, lodo_folds, run_fold, SweepReport};
use mgec::gradcheck::{run_gradcheck, GradcheckOptions};
use mgec::losses::{bl_loss, jel_loss, mutual_weight, sl_loss};
use mgec::models::RouterState;
use mgec::numerics::{FdOptions, Matrix};
use mgec::training::{Branches, TrainConfig, TrainOutcome};
use rand::seq::index::sample as choose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict, secs: f64) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {:<3} {tag}  {}  [{secs:.1}s]", v.id, v.detail);
}

fn run(f: impl FnOnce() -> Vec<Verdict>) -> Vec<Verdict> {
    let start = Instant::now();
    let verdicts = f();
    let secs = start.elapsed().as_secs_f64();
    for v in &verdicts {
        report(v, secs);
    }
    verdicts
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cell_mean(r: &SweepReport, lambda: f64, a: Branches) -> f64 {
    r.cell(lambda, a).expect("cell present").mean_accuracy
}

fn crossover() -> Vec<Verdict> {
    let grid = [0.0, 0.5, 1.0];
    let config = TrainConfig {
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let sweep = lambda_sweep(
        &SyntheticSpec::default(),
        &grid,
        &SEEDS,
        &config,
        &Branches::ALL,
    )
    .expect("default sweep");
    let (s0, s1) = (
        cell_mean(&sweep, 0.0, Branches::SharedOnly),
        cell_mean(&sweep, 1.0, Branches::SharedOnly),
    );
    let a = Verdict {
        id: "1a",
        pass: s1 - s0 >= 0.03,
        detail: format!(
            "shared-only λ=1 {s1:.4} vs λ=0 {s0:.4}, gain {:+.4} (need ≥ +0.03)",
            s1 - s0
        ),
    };

    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for &l in &grid {
        let full = cell_mean(&sweep, l, Branches::Full);
        let best = cell_mean(&sweep, l, Branches::SharedOnly).max(cell_mean(
            &sweep,
            l,
            Branches::RoutedOnly,
        ));
        worst = worst.min(full - best);
        parts.push(format!("λ={l}: full {full:.4} best-ablation {best:.4}"));
    }
    let c = Verdict {
        id: "1c",
        pass: worst >= -0.02,
        detail: format!(
            "{}; min margin {worst:+.4} (need ≥ -0.02)",
            parts.join(", ")
        ),
    };

    let wide = SyntheticSpec {
        sigma_w_group: 10.0,
        sigma_w_domain: 10.0,
        ..SyntheticSpec::default()
    };
    let spread = lambda_sweep(
        &wide,
        &[0.0],
        &SEEDS,
        &config,
        &[Branches::SharedOnly, Branches::RoutedOnly],
    )
    .expect("large-spread sweep");
    let (sh, ro) = (
        cell_mean(&spread, 0.0, Branches::SharedOnly),
        cell_mean(&spread, 0.0, Branches::RoutedOnly),
    );
    let b = Verdict {
        id: "1b",
        pass: ro - sh >= 0.02,
        detail: format!(
            "large-spread λ=0: routed-only {ro:.4} vs shared-only {sh:.4}, gap {:+.4} (need ≥ +0.02)",
            ro - sh
        ),
    };
    vec![a, b, c]
}

fn gradients() -> Vec<Verdict> {
    let opts = GradcheckOptions {
        fd: FdOptions {
            n_probes: 100,
            tol: 1e-4,
            ..FdOptions::default()
        },
        ..GradcheckOptions::default()
    };
    let checks = run_gradcheck(&opts).expect("gradcheck runs");
    let worst = checks
        .iter()
        .map(|c| c.report.max_rel_err)
        .fold(0.0, f64::max);
    let probed = checks.iter().all(|c| c.report.probed == 100);
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.report.pass)
        .map(|c| c.name.as_str())
        .collect();
    vec![Verdict {
        id: "2",
        pass: failed.is_empty() && probed,
        detail: format!(
            "{} objectives × 100 coordinates, worst rel err {worst:.2e}, failed {failed:?}",
            checks.len()
        ),
    }]
}

fn rows(data: Vec<Vec<f64>>) -> Matrix<f64> {
    let (n, m) = (data.len(), data[0].len());
    Matrix::from_vec(n, m, data.into_iter().flatten().collect()).unwrap()
}

fn one_hot(j: usize, m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[j] = 1.0;
    v
}

fn loss_oracles() -> Vec<Verdict> {
    let m = 5;
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let good = (got - want).abs() <= tol;
        ok &= good;
        notes.push(format!("{name} {got:.6}{}", if good { "" } else { "!" }));
    };

    for experts in [4, 5, 8] {
        let collapse = bl_loss(&rows(vec![one_hot(0, experts); 40])).value;
        check(
            &format!("bl collapse M={experts}"),
            collapse,
            experts as f64,
            0.0,
        );
        // 1/5 is not a binary fraction, so M=5 can only be 1 to rounding
        let tol = if experts.is_power_of_two() {
            0.0
        } else {
            1e-12
        };
        let balanced = bl_loss(&rows(
            (0..40).map(|i| one_hot(i % experts, experts)).collect(),
        ))
        .value;
        check(&format!("bl balanced M={experts}"), balanced, 1.0, tol);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_k2: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let mut w = vec![0.0; m];
            let a: f64 = rng.random();
            for (j, v) in choose(&mut rng, m, 2).into_iter().zip([a, 1.0 - a]) {
                w[j] = v;
            }
            w
        })
        .collect();
    check(
        "bl k=2 monte-carlo",
        bl_loss(&rows(random_k2)).value,
        2.0,
        0.05,
    );

    let domains: Vec<u32> = (0..30).map(|i| i % 3).collect();
    let hot = rows(domains.iter().map(|&d| one_hot(d as usize, m)).collect());
    check("sl one-hot", sl_loss(&hot, &domains).value, 0.0, 1e-12);
    let flat = rows(vec![vec![1.0 / m as f64; m]; 30]);
    check(
        "sl uniform",
        sl_loss(&flat, &domains).value,
        (m as f64).ln(),
        1e-12,
    );

    check("mutual weight", mutual_weight(0.731, 0.731), 2.0, 1e-12);

    let pair = |a: Vec<f64>, b: Vec<f64>| jel_loss(&rows(vec![a]), &rows(vec![b])).value;
    check(
        "jel identical",
        pair(vec![1.0, 2.0, -3.0], vec![1.0, 2.0, -3.0]),
        0.0,
        1e-12,
    );
    check(
        "jel orthogonal",
        pair(vec![1.0, 2.0, 0.0], vec![-2.0, 1.0, 5.0]),
        1.0,
        1e-12,
    );
    check(
        "jel anti-parallel",
        pair(vec![1.0, 2.0, -3.0], vec![-2.0, -4.0, 6.0]),
        2.0,
        1e-12,
    );

    vec![Verdict {
        id: "3",
        pass: ok,
        detail: notes.join(", "),
    }]
}

/// Cosine similarities from the raw router tensors, top-K by full sort,
/// softmax over the chosen similarities.
fn brute_force_route(router: &RouterState<f64>, z: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let (d, r) = router.projection.shape();
    let u: Vec<f64> = (0..r)
        .map(|c| (0..d).map(|i| z[i] * router.projection[(i, c)]).sum())
        .collect();
    let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m = router.prototypes.rows();
    let mut sims: Vec<(f64, usize)> = (0..m)
        .map(|j| {
            let p = router.prototypes.row(j);
            let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            (
                p.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / (pn * un),
                j,
            )
        })
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let top = &sims[..router.top_k];
    let peak = top[0].0;
    let total: f64 = top.iter().map(|(s, _)| (s - peak).exp()).sum();
    let mut w = vec![0.0; m];
    for &(s, j) in top {
        w[j] = (s - peak).exp() / total;
    }
    (top.iter().map(|&(_, j)| j).collect(), w)
}

fn router_invariants() -> Vec<Verdict> {
    let (d, r, m) = (16, 6, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let routers: Vec<RouterState<f64>> = (1..=m)
        .map(|k| RouterState::new(d, r, m, k, &mut rng).unwrap())
        .collect();
    let (mut sparse, mut scale, mut brute) = (0usize, 0usize, 0usize);
    let (mut worst_sum, mut worst_scale, mut worst_brute) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..10_000 {
        let router = &routers[i % m];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let out = router.route(&z).unwrap();
        let nonzero = out.weights.iter().filter(|&&w| w != 0.0).count();
        let sum_err = (out.weights.iter().sum::<f64>() - 1.0).abs();
        worst_sum = worst_sum.max(sum_err);
        sparse += usize::from(nonzero != router.top_k || sum_err > 1e-10);

        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = z.iter().map(|v| v * c).collect();
        let again = router.route(&scaled).unwrap();
        let gap = out
            .weights
            .iter()
            .zip(&again.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_scale = worst_scale.max(gap);
        scale += usize::from(gap > 1e-12 || out.selected != again.selected);

        let (sel, w) = brute_force_route(router, &z);
        let gap = out
            .weights
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_brute = worst_brute.max(gap);
        let same_set =
            sel.iter().collect::<BTreeSet<_>>() == out.selected.iter().collect::<BTreeSet<_>>();
        brute += usize::from(!same_set || gap > 1e-12);
    }
    vec![Verdict {
        id: "4",
        pass: sparse + scale + brute == 0,
        detail: format!(
            "10000 inputs, K=1..{m}: sparsity/normalization violations {sparse} (max |Σw−1| {worst_sum:.1e}), \
             rescaling violations {scale} (max {worst_scale:.1e}), brute-force disagreements {brute} (max {worst_brute:.1e})"
        ),
    }]
}

fn fold0(spec: &SyntheticSpec, config: &TrainConfig, seed: u64) -> TrainOutcome<f64> {
    let (ds, teacher) = generate_synthetic(spec).expect("default data");
    let fold = &lodo_folds(&ds).unwrap()[0];
    let config = TrainConfig {
        seed: fold_seed(seed, 0),
        ..config.clone()
    };
    run_fold::<f64, _>(
        &ds,
        fold,
        &config,
        Branches::Full,
        Some(&teacher),
        |_, _| Ok(()),
    )
    .expect("training run")
    .1
}

fn final_routing(o: &TrainOutcome<f64>) -> (f64, f64) {
    let r = o
        .history
        .last()
        .and_then(|r| r.routing.as_ref())
        .expect("routing stats");
    (r.load_cv, r.routing_entropy)
}

fn regularized_runs() -> Vec<Verdict> {
    let base = TrainConfig::default();
    let without = |bl: bool, sl: bool| TrainConfig {
        regularizers: mgec::losses::Regularizers {
            bl,
            sl,
            ..base.regularizers
        },
        ..base.clone()
    };
    let (no_bl, no_sl) = (without(false, true), without(true, false));
    let (mut init, mut best) = (Vec::new(), Vec::new());
    let (mut cv_on, mut cv_off, mut ent_on, mut ent_off) = (vec![], vec![], vec![], vec![]);
    for seed in SEEDS {
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let full = fold0(&spec, &base, seed);
        let (e_s, e_r) = full.initial_alignment.expect("initial alignment");
        init.push(e_s + e_r);
        let at_best = &full.history[full.best_epoch - 1];
        best.push(at_best.eps_shared.unwrap() + at_best.eps_routed.unwrap());
        let (cv, ent) = final_routing(&full);
        cv_on.push(cv);
        ent_on.push(ent);
        cv_off.push(final_routing(&fold0(&spec, &no_bl, seed)).0);
        ent_off.push(final_routing(&fold0(&spec, &no_sl, seed)).1);
    }
    let (i, b) = (mean(&init), mean(&best));
    let five = Verdict {
        id: "5",
        pass: b <= i,
        detail: format!("mean ε_S+ε_R at best epoch {b:.4} vs initialization {i:.4}"),
    };
    let (con, coff, eon, eoff) = (mean(&cv_on), mean(&cv_off), mean(&ent_on), mean(&ent_off));
    let six = Verdict {
        id: "6",
        pass: con < coff && eon < eoff,
        detail: format!(
            "final load CV with BL {con:.4} vs without {coff:.4}; routing entropy with SL {eon:.4} vs without {eoff:.4}"
        ),
    };
    vec![five, six]
}

fn determinism() -> Vec<Verdict> {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_mgec");
    let cmd = |args: &[&str]| {
        let out = Command::new(bin)
            .current_dir(dir.path())
            .env("MGEC_THREADS", "1")
            .env_remove("RUST_LOG")
            .args(args)
            .output()
            .expect("binary runs");
        out.status.success()
    };
    let mut ok = cmd(&["gen", "--out", "d.csv"]);
    for run in ["a", "b"] {
        ok &= cmd(&[
            "train",
            "--data",
            "d.csv",
            "--out",
            run,
            "--test-domains",
            "0",
            "--seed",
            "7",
        ]);
    }
    let same = |f: &str| {
        let read = |run: &str| fs::read(dir.path().join(run).join(f)).ok();
        read("a").is_some() && read("a") == read("b")
    };
    let files = same("epochs.jsonl") && same("checkpoint.json");

    let template = SyntheticSpec {
        samples_per_domain: 80,
        dim: 16,
        ..SyntheticSpec::default()
    };
    let config = TrainConfig {
        max_epochs: 4,
        warmup_epochs: 2,
        patience: 2,
        hidden: vec![16, 8],
        gate_dim: 4,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let sweep_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| lambda_sweep(&template, &[0.0, 1.0], &[0, 1], &config, &Branches::ALL))
            .expect("sweep")
    };
    let (serial, parallel) = (sweep_with(1), sweep_with(4));
    let agg = serial.cells == parallel.cells && serial.rows == parallel.rows;
    vec![Verdict {
        id: "7",
        pass: ok && files && agg,
        detail: format!(
            "cli runs ok {ok}; epochs.jsonl and checkpoint byte-identical {files}; \
             1-thread and 4-thread sweep aggregates equal {agg}"
        ),
    }]
}

fn masking() -> Vec<Verdict> {
    let spec = AugmentSpec::default();
    let grid = |electrodes: usize| Sample {
        features: vec![1.0; electrodes * 100],
        layout: FeatureLayout::Grid {
            electrodes,
            timesteps: 100,
        },
        label: 0,
        domain_id: 0,
        t_index: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let wide = grid(64);
    let mut zeroed = 0usize;
    for _ in 0..10_000 {
        let m = apply_mask(&wide, &spec, &mut rng);
        zeroed += m
            .features
            .chunks_exact(100)
            .filter(|r| r.iter().all(|&v| v == 0.0))
            .count();
    }
    let fraction = zeroed as f64 / (10_000.0 * 64.0);

    let expected = (spec.rho * 100.0).ceil() as usize;
    let narrow = grid(3);
    let mut exact = true;
    for _ in 0..10_000 {
        let m = apply_mask(&narrow, &spec, &mut rng);
        for row in m.features.chunks_exact(100) {
            let zeros: Vec<usize> = (0..100).filter(|&t| row[t] == 0.0).collect();
            exact &= zeros.len() == expected && zeros[expected - 1] - zeros[0] == expected - 1;
        }
    }
    vec![Verdict {
        id: "8",
        pass: (fraction - 0.10).abs() <= 0.01 && exact,
        detail: format!(
            "64-electrode row fraction {fraction:.4} (need 0.10 ± 0.01); 3-electrode fallback \
             always {expected} contiguous zeros per electrode {exact}"
        ),
    }]
}

fn main() {
    let start = Instant::now();
    let mut all = Vec::new();
    all.extend(run(gradients));
    all.extend(run(loss_oracles));
    all.extend(run(router_invariants));
    all.extend(run(masking));
    all.extend(run(determinism));
    all.extend(run(regularized_runs));
    all.extend(run(crossover));
    let passed = all.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} checks passed in {:.0}s",
        all.len(),
        start.elapsed().as_secs_f64()
    );
}
