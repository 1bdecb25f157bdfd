use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar};
use crate::error::{Error, Result};

/// Adam hyperparameters. Weight decay is decoupled from the gradient and
/// only touches tensors flagged by [`ParamSet::decay_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Moment accumulators for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One AdamW update of `params` from `grads`.
    pub fn update<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let decay = params.decay_mask();
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.first.len() {
            return Err(Error::config("adam: tensor count mismatch"));
        }
        for (i, (p, g)) in tensors.iter().zip(&grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(Error::config(format!("adam: tensor {i} shape mismatch")));
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let lr = T::of(c.lr);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(t));
        let bc2 = T::one() - T::of(c.beta2.powi(t));
        let eps = T::of(c.eps);
        let shrink = T::one() - T::of(c.lr * c.weight_decay);

        for (i, p) in tensors.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let decays = decay[i] && c.weight_decay != 0.0;
            for (((w, &g), mi), vi) in p
                .iter_mut()
                .zip(grads[i])
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                if decays {
                    *w *= shrink;
                }
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
