//! Batched inference and the per-epoch diagnostics built on it.

use crate::data::{Dataset, Sample, TeacherRecord};
use crate::error::{Error, Result};
use crate::models::{fuse_predictions, ModelPair, RoutingResult};
use crate::numerics::{argmax, softmax, Matrix, Scalar};

use super::Branches;

const CHUNK: usize = 512;

pub fn input_matrix<T: Scalar>(samples: &[&Sample]) -> Matrix<T> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let data = samples
        .iter()
        .flat_map(|s| s.features.iter().map(|&v| T::of(v)))
        .collect();
    Matrix::from_vec(samples.len(), dim, data).expect("dataset rows share one width")
}

/// Logits of the requested branches over a whole dataset.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    pub shared: Option<Matrix<T>>,
    pub routed: Option<Matrix<T>>,
    pub routing: Vec<RoutingResult<T>>,
}

/// Hard predictions per branch; `fused` needs both.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPredictions {
    pub shared: Option<Vec<usize>>,
    pub routed: Option<Vec<usize>>,
    pub fused: Option<Vec<usize>>,
}

impl BranchPredictions {
    /// The branch a run is judged by: fused for full runs, else the one
    /// trained model.
    pub fn primary(&self, branches: Branches) -> &[usize] {
        let p = match branches {
            Branches::Full => &self.fused,
            Branches::SharedOnly => &self.shared,
            Branches::RoutedOnly => &self.routed,
        };
        p.as_deref().expect("primary branch was inferred")
    }
}

pub fn infer<T: Scalar>(
    pair: &ModelPair<T>,
    dataset: &Dataset,
    shared: bool,
    routed: bool,
) -> Result<Inference<T>> {
    let c = pair.shared.class_count();
    let n = dataset.len();
    let mut s_logits = Vec::with_capacity(if shared { n * c } else { 0 });
    let mut r_logits = Vec::with_capacity(if routed { n * c } else { 0 });
    let mut routing = Vec::with_capacity(if routed { n } else { 0 });
    let samples: Vec<&Sample> = dataset.samples().iter().collect();
    for chunk in samples.chunks(CHUNK) {
        let x = input_matrix::<T>(chunk);
        if shared {
            s_logits.extend(pair.shared.predict_batch(&x)?.into_vec());
        }
        if routed {
            let (logits, r) = pair.routed.predict_batch(&x)?;
            r_logits.extend(logits.into_vec());
            routing.extend(r);
        }
    }
    Ok(Inference {
        shared: shared
            .then(|| Matrix::from_vec(n, c, s_logits))
            .transpose()?,
        routed: routed
            .then(|| Matrix::from_vec(n, c, r_logits))
            .transpose()?,
        routing,
    })
}

impl<T: Scalar> Inference<T> {
    pub fn predictions(&self) -> Result<BranchPredictions> {
        let hard = |m: &Matrix<T>| m.row_iter().map(argmax).collect::<Vec<_>>();
        let fused = match (&self.shared, &self.routed) {
            (Some(s), Some(r)) => Some(
                s.row_iter()
                    .zip(r.row_iter())
                    .map(|(a, b)| fuse_predictions(a, b).map(|(k, _)| k))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(BranchPredictions {
            shared: self.shared.as_ref().map(hard),
            routed: self.routed.as_ref().map(hard),
            fused,
        })
    }
}

/// Mean squared distance between each model's softmax output and the
/// teacher distribution, `(ε_S, ε_R)`.
pub fn alignment_errors<T: Scalar>(
    pair: &ModelPair<T>,
    samples: &Dataset,
    teacher: &TeacherRecord,
) -> Result<(f64, f64)> {
    if teacher.class_count != pair.shared.class_count()
        || teacher.class_count != pair.routed.class_count()
    {
        return Err(Error::config(format!(
            "teacher has {} classes, models have {}",
            teacher.class_count,
            pair.shared.class_count()
        )));
    }
    if samples.is_empty() {
        return Err(Error::config("alignment errors need at least one sample"));
    }
    let out = infer(pair, samples, true, true)?;
    let (shared, routed) = (out.shared.expect("inferred"), out.routed.expect("inferred"));
    let mut eps = (0.0, 0.0);
    for (i, s) in samples.samples().iter().enumerate() {
        let g = teacher.probabilities(s.domain_id, &s.features);
        let dist = |logits: &[T]| -> f64 {
            softmax(logits)
                .iter()
                .zip(&g)
                .map(|(p, q)| (p.as_f64() - q).powi(2))
                .sum()
        };
        eps.0 += dist(shared.row(i));
        eps.1 += dist(routed.row(i));
    }
    let n = samples.len() as f64;
    Ok((eps.0 / n, eps.1 / n))
}

/// Fraction of samples that selected each expert; sums to K.
pub fn expert_load<T: Scalar>(routing: &[RoutingResult<T>], experts: usize) -> Vec<f64> {
    let mut load = vec![0.0; experts];
    for r in routing {
        for &j in &r.selected {
            load[j] += 1.0;
        }
    }
    let n = routing.len().max(1) as f64;
    load.iter_mut().for_each(|f| *f /= n);
    load
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Mean over domains of the entropy of the domain's average routing
/// vector. `dense` reads the full softmax instead of the sparse weights.
pub fn routing_entropy<T: Scalar>(
    routing: &[RoutingResult<T>],
    domains: &[u32],
    dense: bool,
) -> f64 {
    let Some(first) = routing.first() else {
        return 0.0;
    };
    let m = first.weights.len();
    let mut sums: std::collections::BTreeMap<u32, (Vec<f64>, usize)> = Default::default();
    for (r, &d) in routing.iter().zip(domains) {
        let entry = sums.entry(d).or_insert_with(|| (vec![0.0; m], 0));
        let v = if dense { &r.probabilities } else { &r.weights };
        for (acc, w) in entry.0.iter_mut().zip(v) {
            *acc += w.as_f64();
        }
        entry.1 += 1;
    }
    let total: f64 = sums
        .values()
        .map(|(s, n)| {
            s.iter()
                .map(|v| v / *n as f64)
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / sums.len() as f64
}
