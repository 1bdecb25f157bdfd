//! Loss functions with analytic gradients, and the per-model objectives
//! built from them.
//!
//! Every loss returns its value together with the gradient with respect
//! to its direct inputs (logits, embeddings, routing weights or per-sample
//! losses); the objectives chain those into model gradients.

mod objectives;

use std::collections::BTreeMap;

use crate::numerics::{dot, log_sum_exp, norm, softmax, Matrix, Scalar};

pub use objectives::{
    routed_total, shared_total, Batch, BatchLossReport, GateSignal, LossMode, Regularizers,
    RoutedPass, SharedPass,
};

/// Gap clamp for the mutual weight `1 + exp(gap)`.
pub const GAP_CLAMP: f64 = 30.0;
/// Embeddings at or below this norm are excluded from the JEL average.
pub const JEL_NORM_EPS: f64 = 1e-12;

/// Mean cross-entropy and the per-sample losses `-log p_i[y_i]`.
pub fn ce_loss<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> (T, Vec<T>) {
    assert_eq!(logits.rows(), labels.len(), "one label per row");
    let per: Vec<T> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            log_sum_exp(row) - row[y]
        })
        .collect();
    let mean = per.iter().copied().sum::<T>() / T::of(per.len().max(1) as f64);
    (mean, per)
}

/// Gradient of `Σ_i d_i · ℓ_i` with respect to the logits.
pub fn ce_backward<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    d_per_sample: &[T],
) -> Matrix<T> {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (i, &y) in labels.iter().enumerate() {
        let p = softmax(logits.row(i));
        let d = d_per_sample[i];
        let row = grad.row_mut(i);
        for (c, (g, pc)) in row.iter_mut().zip(p).enumerate() {
            let target = if c == y { T::one() } else { T::zero() };
            *g = d * (pc - target);
        }
    }
    grad
}

/// Joint-embedding loss: mean cosine distance between paired embeddings.
#[derive(Debug, Clone)]
pub struct JelLoss<T> {
    pub value: T,
    pub grad_neighbor: Matrix<T>,
    pub grad_current: Matrix<T>,
    pub used: usize,
    pub skipped: usize,
}

impl<T> JelLoss<T> {
    /// Every pair had a zero-norm embedding; the value is reported as 0.
    pub fn all_skipped(&self) -> bool {
        self.used == 0
    }
}

pub fn jel_loss<T: Scalar>(neighbor: &Matrix<T>, current: &Matrix<T>) -> JelLoss<T> {
    assert_eq!(neighbor.shape(), current.shape(), "paired embeddings");
    let (n, d) = neighbor.shape();
    let mut grad_neighbor = Matrix::zeros(n, d);
    let mut grad_current = Matrix::zeros(n, d);
    let eps = T::of(JEL_NORM_EPS);
    let valid: Vec<usize> = (0..n)
        .filter(|&i| norm(neighbor.row(i)) > eps && norm(current.row(i)) > eps)
        .collect();
    if valid.is_empty() {
        if n > 0 {
            log::warn!("joint-embedding loss: all {n} pairs have zero-norm embeddings");
        }
        return JelLoss {
            value: T::zero(),
            grad_neighbor,
            grad_current,
            used: 0,
            skipped: n,
        };
    }
    let scale = T::one() / T::of(valid.len() as f64);
    let mut total = T::zero();
    for &i in &valid {
        let (a, b) = (neighbor.row(i), current.row(i));
        let (na, nb) = (norm(a), norm(b));
        let cos = dot(a, b) / (na * nb);
        total += T::one() - cos;
        // ∂(1 − cos)/∂a = −(b/(|a||b|) − cos·a/|a|²)
        let inv = T::one() / (na * nb);
        let (ca, cb) = (cos / (na * na), cos / (nb * nb));
        for k in 0..d {
            grad_neighbor[(i, k)] = -scale * (b[k] * inv - ca * a[k]);
            grad_current[(i, k)] = -scale * (a[k] * inv - cb * b[k]);
        }
    }
    JelLoss {
        value: total * scale,
        grad_neighbor,
        grad_current,
        used: valid.len(),
        skipped: n - valid.len(),
    }
}

/// Value and gradient of a loss over a routing-weight matrix.
#[derive(Debug, Clone)]
pub struct RoutingLoss<T> {
    pub value: T,
    pub grad: Matrix<T>,
}

/// Specialization loss: mean over the subjects present of the entropy of
/// each subject's average routing distribution (`0·ln 0 = 0`).
pub fn sl_loss<T: Scalar>(weights: &Matrix<T>, domains: &[u32]) -> RoutingLoss<T> {
    assert_eq!(weights.rows(), domains.len(), "one domain per row");
    let m = weights.cols();
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &d) in domains.iter().enumerate() {
        groups.entry(d).or_default().push(i);
    }
    let mut grad = Matrix::zeros(weights.rows(), m);
    let subjects = T::of(groups.len().max(1) as f64);
    let mut value = T::zero();
    for rows in groups.values() {
        let count = T::of(rows.len() as f64);
        let mut mean = vec![T::zero(); m];
        for &i in rows {
            for (acc, &w) in mean.iter_mut().zip(weights.row(i)) {
                *acc += w;
            }
        }
        mean.iter_mut().for_each(|v| *v /= count);
        let mut entropy = T::zero();
        let mut d_mean = vec![T::zero(); m];
        for (j, &r) in mean.iter().enumerate() {
            if r > T::zero() {
                entropy -= r * r.ln();
                d_mean[j] = -(r.ln() + T::one());
            }
        }
        value += entropy;
        for &i in rows {
            for (g, &dm) in grad.row_mut(i).iter_mut().zip(&d_mean) {
                *g = dm / (count * subjects);
            }
        }
    }
    RoutingLoss {
        value: value / subjects,
        grad,
    }
}

/// Balance loss `M·Σ_j f_j·r̄_j` on a single routing matrix.
pub fn bl_loss<T: Scalar>(weights: &Matrix<T>) -> RoutingLoss<T> {
    balance_loss(weights, weights)
}

/// Balance loss with selection fractions `f_j` read from `selection`
/// (entries > 0 count as routed) and mean weights `r̄_j` from `gate`. The
/// fractions are piecewise constant, so the gradient flows through `gate`
/// only.
pub fn balance_loss<T: Scalar>(selection: &Matrix<T>, gate: &Matrix<T>) -> RoutingLoss<T> {
    assert_eq!(
        selection.shape(),
        gate.shape(),
        "routing matrices must align"
    );
    let (n, m) = gate.shape();
    let nf = T::of(n.max(1) as f64);
    let mf = T::of(m as f64);
    let mut frac = vec![T::zero(); m];
    let mut mean = vec![T::zero(); m];
    for i in 0..n {
        for j in 0..m {
            if selection[(i, j)] > T::zero() {
                frac[j] += T::one();
            }
            mean[j] += gate[(i, j)];
        }
    }
    frac.iter_mut().for_each(|v| *v /= nf);
    mean.iter_mut().for_each(|v| *v /= nf);
    let value = mf * frac.iter().zip(&mean).map(|(f, r)| *f * *r).sum::<T>();
    let mut grad = Matrix::zeros(n, m);
    for i in 0..n {
        for (g, &f) in grad.row_mut(i).iter_mut().zip(&frac) {
            *g = mf * f / nf;
        }
    }
    RoutingLoss { value, grad }
}

/// `1 + exp(clamp(own − guide, ±30))`.
pub fn mutual_weight<T: Scalar>(own: T, guide: T) -> T {
    let c = T::of(GAP_CLAMP);
    T::one() + (own - guide).max(-c).min(c).exp()
}

/// Loss-gap reweighted mean `(1/N)·Σ (1 + exp(ℓ_a − ℓ_b))·ℓ_a` and its
/// gradient with respect to the own losses `ℓ_a`. The guide losses `ℓ_b`
/// are constants.
pub fn mutual_weighted_loss<T: Scalar>(own: &[T], guide: &[T]) -> (T, Vec<T>) {
    assert_eq!(own.len(), guide.len(), "paired per-sample losses");
    let n = T::of(own.len().max(1) as f64);
    let c = T::of(GAP_CLAMP);
    let mut value = T::zero();
    let grad = own
        .iter()
        .zip(guide)
        .map(|(&a, &b)| {
            let gap = a - b;
            let e = gap.max(-c).min(c).exp();
            value += (T::one() + e) * a;
            // the clamp is flat outside (−30, 30)
            let de = if gap.abs() < c { e } else { T::zero() };
            (T::one() + e + de * a) / n
        })
        .collect();
    (value / n, grad)
}

#[cfg(test)]
mod tests;
