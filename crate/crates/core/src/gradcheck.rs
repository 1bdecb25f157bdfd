//! Finite-difference verification of every training objective, end to
//! end through the models (extractor, router projection and prototypes,
//! experts).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{Batch, GateSignal, LossMode, Regularizers, RoutedPass, SharedPass};
use crate::models::{ModelConfig, RoutedModel, SharedModel};
use crate::numerics::{finite_diff_check, FdOptions, FdReport, Matrix, ParamSet};

/// Minimum distance of the probe point from ReLU kinks and routing ties.
pub const PROBE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub fd: FdOptions,
    /// Scale analytic gradients by 1.01 to confirm the checker bites.
    pub corrupt: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCheck {
    pub name: String,
    pub params: usize,
    pub report: FdReport,
}

const INPUT: usize = 10;
const BATCH: usize = 12;

fn model_config(top_k: usize) -> ModelConfig {
    ModelConfig {
        input_dim: INPUT,
        hidden: vec![12, 6],
        class_count: 3,
        experts: 5,
        top_k,
        gate_dim: 4,
    }
}

fn random_batch(rng: &mut ChaCha8Rng) -> Batch<f64> {
    let x: Vec<f64> = (0..BATCH * INPUT)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    // masked copies stand in for augmented neighbors
    let pair: Vec<f64> = x
        .iter()
        .map(|&v| if rng.random::<f64>() < 0.1 { 0.0 } else { v })
        .collect();
    Batch {
        x: Matrix::from_vec(BATCH, INPUT, x).expect("sized"),
        labels: (0..BATCH).map(|i| i % 3).collect(),
        domains: (0..BATCH).map(|i| (i % 4) as u32 / 2).collect(),
        pair: Some(Matrix::from_vec(BATCH, INPUT, pair).expect("sized")),
    }
}

fn shared_clear(model: &SharedModel<f64>, batch: &Batch<f64>) -> bool {
    let regs = Regularizers::default();
    let Ok(pass) = SharedPass::new(model, batch, &regs) else {
        return false;
    };
    let pair_ok = batch.pair.as_ref().is_none_or(|p| {
        model
            .extractor
            .forward_batch(p)
            .ok()
            .and_then(|(_, c)| c.relu_margin(&model.extractor))
            .is_none_or(|m| m > PROBE_MARGIN)
    });
    pass.forward
        .relu_margin(model)
        .is_none_or(|m| m > PROBE_MARGIN)
        && pair_ok
}

fn routed_clear(model: &RoutedModel<f64>, batch: &Batch<f64>) -> bool {
    let Ok(pass) = RoutedPass::new(model, batch) else {
        return false;
    };
    pass.forward
        .relu_margin(model)
        .is_none_or(|m| m > PROBE_MARGIN)
        && pass.forward.routing_margin() > PROBE_MARGIN
}

/// Draws models and a batch until the probe point clears every kink and
/// routing tie by [`PROBE_MARGIN`].
fn probe_point(
    seed: u64,
) -> (
    SharedModel<f64>,
    RoutedModel<f64>,
    RoutedModel<f64>,
    Batch<f64>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let batch = random_batch(&mut rng);
        let shared = SharedModel::new(&model_config(1), &mut rng).expect("valid config");
        let top1 = RoutedModel::new(&model_config(1), &mut rng).expect("valid config");
        let top2 = RoutedModel::new(&model_config(2), &mut rng).expect("valid config");
        if shared_clear(&shared, &batch)
            && routed_clear(&top1, &batch)
            && routed_clear(&top2, &batch)
        {
            return (shared, top1, top2, batch);
        }
    }
}

fn mode(guide: Option<&[f64]>) -> LossMode<'_, f64> {
    guide.map_or(LossMode::WarmUp, LossMode::Mutual)
}

fn regs(jel: bool, sl: bool, bl: bool, gate: GateSignal) -> Regularizers {
    Regularizers { jel, sl, bl, gate }
}

fn check_shared(
    name: &str,
    model: &SharedModel<f64>,
    batch: &Batch<f64>,
    guide: Option<&[f64]>,
    regs: Regularizers,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<LossCheck> {
    let (_, grads) = SharedPass::new(model, batch, &regs)?.objective(mode(guide));
    let mut analytic = grads.flatten();
    if opts.corrupt {
        analytic.iter_mut().for_each(|g| *g *= 1.01);
    }
    let mut probe = model.clone();
    let report = finite_diff_check(
        |p: &[f64]| {
            probe.load_flat(p);
            let pass = SharedPass::new(&probe, batch, &regs).expect("fixed shapes");
            pass.objective(mode(guide)).0.total
        },
        &model.flatten(),
        &analytic,
        &opts.fd,
        rng,
    );
    Ok(LossCheck {
        name: name.into(),
        params: analytic.len(),
        report,
    })
}

fn check_routed(
    name: &str,
    model: &RoutedModel<f64>,
    batch: &Batch<f64>,
    guide: Option<&[f64]>,
    regs: Regularizers,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<LossCheck> {
    let (_, grads) = RoutedPass::new(model, batch)?.objective(mode(guide), &regs);
    let mut analytic = grads.flatten();
    if opts.corrupt {
        analytic.iter_mut().for_each(|g| *g *= 1.01);
    }
    let mut probe = model.clone();
    let report = finite_diff_check(
        |p: &[f64]| {
            probe.load_flat(p);
            let pass = RoutedPass::new(&probe, batch).expect("fixed shapes");
            pass.objective(mode(guide), &regs).0.total
        },
        &model.flatten(),
        &analytic,
        &opts.fd,
        rng,
    );
    Ok(LossCheck {
        name: name.into(),
        params: analytic.len(),
        report,
    })
}

/// Runs every objective check. Names list the active components.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<LossCheck>> {
    let (shared, top1, top2, batch) = probe_point(opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let off = Regularizers {
        jel: false,
        sl: false,
        bl: false,
        gate: GateSignal::Sparse,
    };

    // partner losses for the mutual terms
    let shared_losses = SharedPass::new(&shared, &batch, &off)?
        .per_sample()
        .to_vec();
    let routed_losses = RoutedPass::new(&top2, &batch)?.per_sample().to_vec();

    use GateSignal::{Dense, Sparse};
    let mut checks = vec![
        check_shared("erm", &shared, &batch, None, off, opts, &mut rng)?,
        check_shared(
            "erm+jel",
            &shared,
            &batch,
            None,
            regs(true, false, false, Sparse),
            opts,
            &mut rng,
        )?,
        check_shared(
            "s_from_r+jel",
            &shared,
            &batch,
            Some(&routed_losses),
            regs(true, false, false, Sparse),
            opts,
            &mut rng,
        )?,
        check_routed("ce[k=2]", &top2, &batch, None, off, opts, &mut rng)?,
        check_routed(
            "ce+sl[k=2,sparse]",
            &top2,
            &batch,
            None,
            regs(false, true, false, Sparse),
            opts,
            &mut rng,
        )?,
        check_routed(
            "ce+bl[k=2,sparse]",
            &top2,
            &batch,
            None,
            regs(false, false, true, Sparse),
            opts,
            &mut rng,
        )?,
        check_routed(
            "ce+sl+bl[k=1,dense]",
            &top1,
            &batch,
            None,
            regs(false, true, true, Dense),
            opts,
            &mut rng,
        )?,
        check_routed(
            "r_from_s+sl+bl[k=2,sparse]",
            &top2,
            &batch,
            Some(&shared_losses),
            regs(false, true, true, Sparse),
            opts,
            &mut rng,
        )?,
        check_routed(
            "r_from_s+sl+bl[k=1,dense]",
            &top1,
            &batch,
            Some(&shared_losses),
            regs(false, true, true, Dense),
            opts,
            &mut rng,
        )?,
    ];
    checks.retain(|c| c.params > 0);
    Ok(checks)
}
