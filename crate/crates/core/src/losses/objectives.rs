//! Per-model objectives. Coefficients are all 1: each total is the plain
//! sum of its active components.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{balance_loss, ce_backward, ce_loss, jel_loss, mutual_weighted_loss, sl_loss};
use crate::error::Result;
use crate::models::{RoutedForward, RoutedModel, SharedForward, SharedModel};
use crate::numerics::{Matrix, MlpCache, Scalar};

/// One mini-batch as seen by both models.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x: Matrix<T>,
    pub labels: Vec<usize>,
    pub domains: Vec<u32>,
    /// Augmented partner inputs for the joint-embedding loss, row-aligned
    /// with `x`.
    pub pair: Option<Matrix<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Warm-up trains on plain cross-entropy; mutual mode reweights each
/// sample's loss by the gap to the partner's (gradient-stopped) loss.
#[derive(Debug, Clone, Copy)]
pub enum LossMode<'a, T> {
    WarmUp,
    Mutual(&'a [T]),
}

/// Which routing signal the specialization and balance losses read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GateSignal {
    /// Softmax over all prototype similarities (differentiable for any K).
    Dense,
    /// The sparse top-K routing weights.
    Sparse,
}

/// Switches for the auxiliary losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regularizers {
    pub jel: bool,
    pub sl: bool,
    pub bl: bool,
    pub gate: GateSignal,
}

impl Default for Regularizers {
    fn default() -> Self {
        Self {
            jel: true,
            sl: true,
            bl: true,
            gate: GateSignal::Dense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLossReport {
    pub total: f64,
    /// Active components by name: `erm`, `jel`, `ce`, `sl`, `bl`,
    /// `r_from_s`, `s_from_r`.
    pub components: BTreeMap<String, f64>,
    /// Per-sample cross-entropy of the model the report belongs to.
    pub per_sample: Vec<f64>,
    /// Pairs dropped from the JEL average for zero-norm embeddings.
    #[serde(default)]
    pub jel_skipped: usize,
}

impl BatchLossReport {
    fn from_components(components: BTreeMap<String, f64>, per_sample: Vec<f64>) -> Self {
        Self {
            total: components.values().sum(),
            components,
            per_sample,
            jel_skipped: 0,
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Cross-entropy term for either mode: value, name and per-sample gradient.
fn ce_term<T: Scalar>(
    per: &[T],
    mode: LossMode<'_, T>,
    plain: &'static str,
    guided: &'static str,
) -> (&'static str, T, Vec<T>) {
    match mode {
        LossMode::WarmUp => {
            let n = T::of(per.len().max(1) as f64);
            let mean = per.iter().copied().sum::<T>() / n;
            (plain, mean, vec![T::one() / n; per.len()])
        }
        LossMode::Mutual(guide) => {
            let (v, g) = mutual_weighted_loss(per, guide);
            (guided, v, g)
        }
    }
}

/// Shared-model forward state for one batch; call [`SharedPass::objective`]
/// once the partner's per-sample losses are known.
pub struct SharedPass<'a, T> {
    model: &'a SharedModel<T>,
    batch: &'a Batch<T>,
    pub forward: SharedForward<T>,
    pair: Option<(Matrix<T>, MlpCache<T>)>,
    per_sample: Vec<T>,
}

impl<'a, T: Scalar> SharedPass<'a, T> {
    pub fn new(
        model: &'a SharedModel<T>,
        batch: &'a Batch<T>,
        regs: &Regularizers,
    ) -> Result<Self> {
        let forward = model.forward_batch(&batch.x)?;
        let pair = match (&batch.pair, regs.jel) {
            (Some(p), true) => Some(model.extractor.forward_batch(p)?),
            _ => None,
        };
        let (_, per_sample) = ce_loss(&forward.logits, &batch.labels);
        Ok(Self {
            model,
            batch,
            forward,
            pair,
            per_sample,
        })
    }

    /// Per-sample losses `ℓ_S`.
    pub fn per_sample(&self) -> &[T] {
        &self.per_sample
    }

    /// `ERM + JEL` in warm-up, `L_{S←R} + JEL` in mutual mode.
    pub fn objective(&self, mode: LossMode<'_, T>) -> (BatchLossReport, SharedModel<T>) {
        let mut components = BTreeMap::new();
        let (name, value, d_per) = ce_term(&self.per_sample, mode, "erm", "s_from_r");
        components.insert(name.to_string(), value.as_f64());
        let d_logits = ce_backward(&self.forward.logits, &self.batch.labels, &d_per);

        let mut grads = self.model.zeros_like();
        let mut skipped = 0;
        let mut d_z = None;
        if let Some((pair_z, pair_cache)) = &self.pair {
            let jel = jel_loss(pair_z, &self.forward.z);
            components.insert("jel".into(), jel.value.as_f64());
            skipped = jel.skipped;
            self.model
                .extractor
                .backward(pair_cache, &jel.grad_neighbor, &mut grads.extractor);
            d_z = Some(jel.grad_current);
        }
        self.model
            .backward(&self.forward, &d_logits, d_z.as_ref(), &mut grads);
        let mut report = BatchLossReport::from_components(components, to_f64(&self.per_sample));
        report.jel_skipped = skipped;
        (report, grads)
    }
}

/// Routed-model forward state for one batch.
pub struct RoutedPass<'a, T> {
    model: &'a RoutedModel<T>,
    batch: &'a Batch<T>,
    pub forward: RoutedForward<T>,
    per_sample: Vec<T>,
}

impl<'a, T: Scalar> RoutedPass<'a, T> {
    pub fn new(model: &'a RoutedModel<T>, batch: &'a Batch<T>) -> Result<Self> {
        let forward = model.forward_batch(&batch.x)?;
        let (_, per_sample) = ce_loss(&forward.logits, &batch.labels);
        Ok(Self {
            model,
            batch,
            forward,
            per_sample,
        })
    }

    /// Per-sample losses `ℓ_R`.
    pub fn per_sample(&self) -> &[T] {
        &self.per_sample
    }

    /// `CE + SL + BL` in warm-up, `L_{R←S} + SL + BL` in mutual mode.
    pub fn objective(
        &self,
        mode: LossMode<'_, T>,
        regs: &Regularizers,
    ) -> (BatchLossReport, RoutedModel<T>) {
        let mut components = BTreeMap::new();
        let (name, value, d_per) = ce_term(&self.per_sample, mode, "ce", "r_from_s");
        components.insert(name.to_string(), value.as_f64());
        let d_logits = ce_backward(&self.forward.logits, &self.batch.labels, &d_per);

        let weights = self.forward.weight_matrix();
        let gate = match regs.gate {
            GateSignal::Dense => self.forward.probability_matrix(),
            GateSignal::Sparse => weights.clone(),
        };
        let mut d_gate: Option<Matrix<T>> = None;
        let mut add = |g: Matrix<T>| match &mut d_gate {
            Some(acc) => acc
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .for_each(|(a, b)| *a += *b),
            None => d_gate = Some(g),
        };
        if regs.sl {
            let sl = sl_loss(&gate, &self.batch.domains);
            components.insert("sl".into(), sl.value.as_f64());
            add(sl.grad);
        }
        if regs.bl {
            let bl = balance_loss(&weights, &gate);
            components.insert("bl".into(), bl.value.as_f64());
            add(bl.grad);
        }

        let mut grads = self.model.zeros_like();
        let (d_weights, d_probs) = match regs.gate {
            GateSignal::Dense => (None, d_gate.as_ref()),
            GateSignal::Sparse => (d_gate.as_ref(), None),
        };
        self.model
            .backward(&self.forward, &d_logits, d_weights, d_probs, &mut grads);
        (
            BatchLossReport::from_components(components, to_f64(&self.per_sample)),
            grads,
        )
    }
}

/// One-shot shared objective: forward, loss and gradients.
pub fn shared_total<T: Scalar>(
    batch: &Batch<T>,
    model: &SharedModel<T>,
    mode: LossMode<'_, T>,
    regs: &Regularizers,
) -> Result<(BatchLossReport, SharedModel<T>)> {
    Ok(SharedPass::new(model, batch, regs)?.objective(mode))
}

/// One-shot routed objective: forward, loss and gradients.
pub fn routed_total<T: Scalar>(
    batch: &Batch<T>,
    model: &RoutedModel<T>,
    mode: LossMode<'_, T>,
    regs: &Regularizers,
) -> Result<(BatchLossReport, RoutedModel<T>)> {
    Ok(RoutedPass::new(model, batch)?.objective(mode, regs))
}
