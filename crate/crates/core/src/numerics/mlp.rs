//! Fully connected networks with hand-written backward passes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm_nn, gemm_nt, gemm_tn};
use super::{Matrix, ParamSet, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

/// Affine map `y = act(x·W + b)`; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Multi-layer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
}

impl<T: Scalar> MlpCache<T> {
    /// Smallest |pre-activation| over all ReLU units, i.e. the distance to
    /// the nearest kink. `None` when the network has no ReLU layer.
    pub fn relu_margin(&self, mlp: &Mlp<T>) -> Option<T> {
        mlp.layers
            .iter()
            .zip(&self.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, p)| p.as_slice().iter().map(|v| v.abs()))
            .reduce(T::min)
    }
}

impl<T: Scalar> Mlp<T> {
    /// Gaussian initialization: He scaling for ReLU layers, `1/fan_in`
    /// otherwise; zero biases.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::config(format!(
                "mlp needs n+1 widths for n activations (got {} widths, {} activations)",
                widths.len(),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::config("mlp widths must be positive"));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = match activation {
                    Activation::Relu => 2.0,
                    Activation::Identity => 1.0,
                };
                let std = (gain / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                    bias: vec![T::zero(); fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("mlp needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_width() {
                return Err(Error::config(format!("layer {i}: bias width mismatch")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").output_width()
    }

    /// Same architecture, all parameters zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![T::zero(); l.bias.len()],
                activation: l.activation,
            })
            .collect();
        Self { layers }
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::config(format!(
                "input width {width} does not match network input {}",
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Forward pass over a batch (one sample per row), keeping the cache.
    pub fn forward_batch(&self, input: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
        self.check_input(input.cols())?;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.clone();
        for layer in &self.layers {
            let pre = affine(layer, &x);
            let mut out = pre.clone();
            if layer.activation != Activation::Identity {
                out.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            cache.inputs.push(x);
            cache.pre.push(pre);
            x = out;
        }
        Ok((x, cache))
    }

    /// Forward pass without a cache.
    pub fn predict_batch(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input.cols())?;
        let mut x = input.clone();
        for layer in &self.layers {
            let mut out = affine(layer, &x);
            if layer.activation != Activation::Identity {
                out.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            x = out;
        }
        Ok(x)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let (out, cache) = self.forward_batch(&x)?;
        Ok((out.into_vec(), cache))
    }

    /// Backward pass. Accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the batch input.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &Matrix<T>, grads: &mut Self) -> Matrix<T> {
        let mut delta = d_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                for (d, &p) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre[idx].as_slice())
                {
                    *d *= layer.activation.derivative(p);
                }
            }
            let g = &mut grads.layers[idx];
            gemm_tn(&cache.inputs[idx], &delta, &mut g.weight);
            for r in 0..delta.rows() {
                for (b, &d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            let mut d_in = Matrix::zeros(delta.rows(), layer.input_width());
            gemm_nt(&delta, &layer.weight, &mut d_in);
            delta = d_in;
        }
        delta
    }
}

fn affine<T: Scalar>(layer: &Layer<T>, x: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), layer.output_width());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&layer.bias);
    }
    gemm_nn(x, &layer.weight, &mut out);
    out
}

impl<T: Scalar> ParamSet<T> for Mlp<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn decay_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|_| [true, false]).collect()
    }
}
