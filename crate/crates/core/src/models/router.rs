//! Prototype routing: cosine similarity between a projected feature and a
//! learned codebook, softmax over the top-K matches.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, softmax, Matrix, ParamSet, Scalar};

/// Below this norm a prototype counts as degenerate.
pub const PROTOTYPE_EPS: f64 = 1e-8;
/// Below this norm the projected feature carries no direction.
pub const PROJECTION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RouterState<T> {
    /// `d × d_r`; the gate input is `zᵀ·projection`.
    pub projection: Matrix<T>,
    /// `M × d_r`; row `j` is prototype `d_j`.
    pub prototypes: Matrix<T>,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingResult<T> {
    /// Sparse routing weights, exactly `top_k` nonzero.
    pub weights: Vec<T>,
    /// Selected experts, best first.
    pub selected: Vec<usize>,
    pub similarities: Vec<T>,
    /// Softmax over all `M` similarities (before selection).
    pub probabilities: Vec<T>,
    /// Gap between the K-th and (K+1)-th similarity; infinite when `K = M`.
    pub margin: T,
}

impl<T: Scalar> RouterState<T> {
    /// Gaussian projection with `1/d` variance; unit-norm Gaussian prototypes.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        gate_dim: usize,
        experts: usize,
        top_k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if top_k == 0 || top_k > experts {
            return Err(Error::config(format!(
                "top_k must lie in 1..={experts}, got {top_k}"
            )));
        }
        if feature_dim == 0 || gate_dim == 0 {
            return Err(Error::config("router dimensions must be positive"));
        }
        let std = (1.0 / feature_dim as f64).sqrt();
        let data = (0..feature_dim * gate_dim)
            .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut router = Self {
            projection: Matrix::from_vec(feature_dim, gate_dim, data)?,
            prototypes: Matrix::zeros(experts, gate_dim),
            top_k,
        };
        for j in 0..experts {
            router.redraw_prototype(j, rng);
        }
        Ok(router)
    }

    pub fn expert_count(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn gate_dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.rows()
    }

    fn redraw_prototype<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) {
        loop {
            let v: Vec<f64> = (0..self.gate_dim())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                for (dst, x) in self.prototypes.row_mut(j).iter_mut().zip(v) {
                    *dst = T::of(x / n);
                }
                return;
            }
        }
    }

    /// Index and norm of the first degenerate prototype, if any.
    pub fn degenerate_prototype(&self) -> Option<(usize, f64)> {
        (0..self.expert_count())
            .map(|j| (j, norm(self.prototypes.row(j)).as_f64()))
            .find(|&(_, n)| !(n > PROTOTYPE_EPS))
    }

    /// Redraws every degenerate prototype; returns their indices.
    pub fn reinit_degenerate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let bad: Vec<usize> = (0..self.expert_count())
            .filter(|&j| !(norm(self.prototypes.row(j)).as_f64() > PROTOTYPE_EPS))
            .collect();
        for &j in &bad {
            self.redraw_prototype(j, rng);
        }
        bad
    }

    fn project(&self, z: &[T]) -> Vec<T> {
        let mut u = vec![T::zero(); self.gate_dim()];
        for (a, &za) in z.iter().enumerate() {
            if za == T::zero() {
                continue;
            }
            for (ub, &w) in u.iter_mut().zip(self.projection.row(a)) {
                *ub += za * w;
            }
        }
        u
    }

    /// Routes one feature vector.
    pub fn route(&self, z: &[T]) -> Result<RoutingResult<T>> {
        if z.len() != self.feature_dim() {
            return Err(Error::config(format!(
                "router expects features of width {}, got {}",
                self.feature_dim(),
                z.len()
            )));
        }
        if let Some((index, norm)) = self.degenerate_prototype() {
            return Err(Error::DegeneratePrototype { index, norm });
        }
        let u = self.project(z);
        let u_norm = norm(&u);
        let m = self.expert_count();
        let similarities: Vec<T> = if u_norm.as_f64() <= PROJECTION_EPS {
            vec![T::zero(); m]
        } else {
            (0..m)
                .map(|j| {
                    let d = self.prototypes.row(j);
                    dot(d, &u) / (norm(d) * u_norm)
                })
                .collect()
        };
        Ok(self.select(similarities))
    }

    /// Top-K selection and softmax given precomputed similarities.
    pub fn select(&self, similarities: Vec<T>) -> RoutingResult<T> {
        let m = similarities.len();
        let k = self.top_k.min(m);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            similarities[b]
                .partial_cmp(&similarities[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let selected = order[..k].to_vec();
        let margin = if k < m {
            similarities[order[k - 1]] - similarities[order[k]]
        } else {
            T::infinity()
        };
        let chosen: Vec<T> = selected.iter().map(|&j| similarities[j]).collect();
        let mut weights = vec![T::zero(); m];
        for (&j, w) in selected.iter().zip(softmax(&chosen)) {
            weights[j] = w;
        }
        RoutingResult {
            probabilities: softmax(&similarities),
            weights,
            selected,
            similarities,
            margin,
        }
    }

    /// Backpropagates through one routing decision with the selected set
    /// held fixed.
    ///
    /// `d_weights` is the gradient with respect to the sparse weights,
    /// `d_probs` the gradient with respect to the dense probabilities.
    /// Router gradients accumulate into `grads`; the feature gradient is
    /// returned.
    pub fn backward(
        &self,
        z: &[T],
        result: &RoutingResult<T>,
        d_weights: &[T],
        d_probs: Option<&[T]>,
        grads: &mut Self,
    ) -> Vec<T> {
        let m = self.expert_count();
        let mut d_sim = vec![T::zero(); m];

        let inner: T = result
            .selected
            .iter()
            .map(|&j| result.weights[j] * d_weights[j])
            .sum();
        for &j in &result.selected {
            d_sim[j] += result.weights[j] * (d_weights[j] - inner);
        }
        if let Some(dp) = d_probs {
            let p = &result.probabilities;
            let inner: T = p.iter().zip(dp).map(|(a, b)| *a * *b).sum();
            for j in 0..m {
                d_sim[j] += p[j] * (dp[j] - inner);
            }
        }

        let u = self.project(z);
        let u_norm = norm(&u);
        if u_norm.as_f64() <= PROJECTION_EPS {
            return vec![T::zero(); z.len()];
        }
        let mut d_u = vec![T::zero(); u.len()];
        for j in 0..m {
            let g = d_sim[j];
            if g == T::zero() {
                continue;
            }
            let d = self.prototypes.row(j);
            let d_norm = norm(d);
            let s = result.similarities[j];
            let inv = T::one() / (d_norm * u_norm);
            let (su, sd) = (s / (u_norm * u_norm), s / (d_norm * d_norm));
            let gd = grads.prototypes.row_mut(j);
            for b in 0..u.len() {
                d_u[b] += g * (d[b] * inv - su * u[b]);
                gd[b] += g * (u[b] * inv - sd * d[b]);
            }
        }

        let mut d_z = vec![T::zero(); z.len()];
        for (a, &za) in z.iter().enumerate() {
            let w_row = self.projection.row(a);
            d_z[a] = dot(w_row, &d_u);
            if za != T::zero() {
                for (gw, &du) in grads.projection.row_mut(a).iter_mut().zip(&d_u) {
                    *gw += za * du;
                }
            }
        }
        d_z
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projection: Matrix::zeros(self.projection.rows(), self.projection.cols()),
            prototypes: Matrix::zeros(self.prototypes.rows(), self.prototypes.cols()),
            top_k: self.top_k,
        }
    }
}

impl<T: Scalar> ParamSet<T> for RouterState<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.projection.as_slice(), self.prototypes.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.projection.as_mut_slice(),
            self.prototypes.as_mut_slice(),
        ]
    }

    fn decay_mask(&self) -> Vec<bool> {
        // shrinking prototypes toward zero degrades the cosine
        vec![true, false]
    }
}
