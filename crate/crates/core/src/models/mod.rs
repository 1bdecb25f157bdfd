//! The collaborating pair: a shared-expert model (extractor + one head)
//! and a routed-expert model (extractor + prototype router + expert
//! heads), plus decision fusion.

mod checkpoint;
mod router;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax, Activation, Matrix, Mlp, MlpCache, ParamSet, Scalar};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use router::{RouterState, RoutingResult, PROJECTION_EPS, PROTOTYPE_EPS};

/// Architecture shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Extractor widths after the input; the last entry is the feature width.
    pub hidden: Vec<usize>,
    pub class_count: usize,
    pub experts: usize,
    pub top_k: usize,
    pub gate_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 128,
            hidden: vec![128, 64],
            class_count: 2,
            experts: 5,
            top_k: 1,
            gate_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.input_dim == 0 {
            return Err(Error::config(
                "extractor widths must be positive and non-empty",
            ));
        }
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(Error::config(format!(
                "top_k must lie in 1..={} (experts), got {}",
                self.experts, self.top_k
            )));
        }
        if self.gate_dim == 0 {
            return Err(Error::config("gate_dim must be positive"));
        }
        Ok(())
    }

    fn extractor<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Mlp<T>> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        Mlp::new(&widths, &vec![Activation::Relu; self.hidden.len()], rng)
    }

    fn head<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Mlp<T>> {
        Mlp::new(
            &[self.feature_dim(), self.class_count],
            &[Activation::Identity],
            rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SharedModel<T> {
    pub extractor: Mlp<T>,
    pub head: Mlp<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RoutedModel<T> {
    pub extractor: Mlp<T>,
    pub router: RouterState<T>,
    pub experts: Vec<Mlp<T>>,
}

/// Two independently parameterized models trained side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelPair<T> {
    pub shared: SharedModel<T>,
    pub routed: RoutedModel<T>,
}

/// Cached shared-model forward pass.
#[derive(Debug, Clone)]
pub struct SharedForward<T> {
    pub z: Matrix<T>,
    pub logits: Matrix<T>,
    extractor_cache: MlpCache<T>,
    head_cache: MlpCache<T>,
}

impl<T: Scalar> SharedForward<T> {
    /// Smallest distance of any ReLU pre-activation from its kink.
    pub fn relu_margin(&self, model: &SharedModel<T>) -> Option<T> {
        self.extractor_cache.relu_margin(&model.extractor)
    }
}

#[derive(Debug, Clone)]
struct ExpertPass<T> {
    expert: usize,
    rows: Vec<usize>,
    outputs: Matrix<T>,
    cache: Option<MlpCache<T>>,
}

/// Cached routed-model forward pass.
#[derive(Debug, Clone)]
pub struct RoutedForward<T> {
    pub z: Matrix<T>,
    pub logits: Matrix<T>,
    pub routing: Vec<RoutingResult<T>>,
    extractor_cache: MlpCache<T>,
    experts: Vec<ExpertPass<T>>,
}

impl<T: Scalar> RoutedForward<T> {
    pub fn relu_margin(&self, model: &RoutedModel<T>) -> Option<T> {
        self.extractor_cache.relu_margin(&model.extractor)
    }

    /// Smallest gap between the K-th and (K+1)-th similarity over the batch.
    pub fn routing_margin(&self) -> T {
        self.routing
            .iter()
            .map(|r| r.margin)
            .fold(T::infinity(), T::min)
    }

    /// Sparse routing weights, one row per sample.
    pub fn weight_matrix(&self) -> Matrix<T> {
        rows_to_matrix(self.routing.iter().map(|r| r.weights.as_slice()))
    }

    /// Dense routing probabilities, one row per sample.
    pub fn probability_matrix(&self) -> Matrix<T> {
        rows_to_matrix(self.routing.iter().map(|r| r.probabilities.as_slice()))
    }
}

fn rows_to_matrix<'a, T: Scalar>(rows: impl Iterator<Item = &'a [T]>) -> Matrix<T> {
    let rows: Vec<Vec<T>> = rows.map(<[T]>::to_vec).collect();
    Matrix::from_rows(&rows).expect("routing rows share a width")
}

impl<T: Scalar> SharedModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            extractor: config.extractor(rng)?,
            head: config.head(rng)?,
        })
    }

    pub fn from_parts(extractor: Mlp<T>, head: Mlp<T>) -> Result<Self> {
        if extractor.output_width() != head.input_width() {
            return Err(Error::config(
                "extractor output width must match head input width",
            ));
        }
        Ok(Self { extractor, head })
    }

    pub fn class_count(&self) -> usize {
        self.head.output_width()
    }

    pub fn forward_batch(&self, x: &Matrix<T>) -> Result<SharedForward<T>> {
        let (z, extractor_cache) = self.extractor.forward_batch(x)?;
        let (logits, head_cache) = self.head.forward_batch(&z)?;
        Ok(SharedForward {
            z,
            logits,
            extractor_cache,
            head_cache,
        })
    }

    pub fn predict_batch(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.head.predict_batch(&self.extractor.predict_batch(x)?)
    }

    /// Single-sample logits and features.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let f = self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
        Ok((f.logits.into_vec(), f.z.into_vec()))
    }

    /// Gradients for `d_logits` plus an optional extra feature gradient.
    pub fn backward(
        &self,
        pass: &SharedForward<T>,
        d_logits: &Matrix<T>,
        d_z: Option<&Matrix<T>>,
        grads: &mut Self,
    ) {
        let mut dz = self
            .head
            .backward(&pass.head_cache, d_logits, &mut grads.head);
        if let Some(extra) = d_z {
            for (a, b) in dz.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                *a += *b;
            }
        }
        self.extractor
            .backward(&pass.extractor_cache, &dz, &mut grads.extractor);
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            extractor: self.extractor.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl<T: Scalar> RoutedModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let extractor = config.extractor(rng)?;
        let router = RouterState::new(
            config.feature_dim(),
            config.gate_dim,
            config.experts,
            config.top_k,
            rng,
        )?;
        let experts = (0..config.experts)
            .map(|_| config.head(rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            extractor,
            router,
            experts,
        })
    }

    pub fn from_parts(
        extractor: Mlp<T>,
        router: RouterState<T>,
        experts: Vec<Mlp<T>>,
    ) -> Result<Self> {
        if experts.len() != router.expert_count() {
            return Err(Error::config("expert count must equal prototype count"));
        }
        if router.feature_dim() != extractor.output_width()
            || experts
                .iter()
                .any(|e| e.input_width() != extractor.output_width())
        {
            return Err(Error::config(
                "router and experts must consume extractor features",
            ));
        }
        let c = experts.first().map(Mlp::output_width);
        if experts.iter().any(|e| Some(e.output_width()) != c) {
            return Err(Error::config("experts must agree on class count"));
        }
        Ok(Self {
            extractor,
            router,
            experts,
        })
    }

    pub fn class_count(&self) -> usize {
        self.experts[0].output_width()
    }

    /// `z = extractor(x)`, `o = Σ_{j∈T} r_j · R_j(z)`, with caches.
    pub fn forward_batch(&self, x: &Matrix<T>) -> Result<RoutedForward<T>> {
        let (z, extractor_cache) = self.extractor.forward_batch(x)?;
        let (logits, routing, experts) = self.mix(&z, true)?;
        Ok(RoutedForward {
            z,
            logits,
            routing,
            extractor_cache,
            experts,
        })
    }

    /// Logits only; also returns the routing decisions.
    pub fn predict_batch(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Vec<RoutingResult<T>>)> {
        let z = self.extractor.predict_batch(x)?;
        let (logits, routing, _) = self.mix(&z, false)?;
        Ok((logits, routing))
    }

    #[allow(clippy::type_complexity)]
    fn mix(
        &self,
        z: &Matrix<T>,
        keep_cache: bool,
    ) -> Result<(Matrix<T>, Vec<RoutingResult<T>>, Vec<ExpertPass<T>>)> {
        let n = z.rows();
        let routing = (0..n)
            .map(|i| self.router.route(z.row(i)))
            .collect::<Result<Vec<_>>>()?;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.experts.len()];
        for (i, r) in routing.iter().enumerate() {
            for &j in &r.selected {
                members[j].push(i);
            }
        }
        let mut logits = Matrix::zeros(n, self.class_count());
        let mut passes = Vec::new();
        for (j, rows) in members.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let input = z.gather_rows(&rows);
            let (outputs, cache) = if keep_cache {
                let (o, c) = self.experts[j].forward_batch(&input)?;
                (o, Some(c))
            } else {
                (self.experts[j].predict_batch(&input)?, None)
            };
            for (r, &i) in rows.iter().enumerate() {
                let w = routing[i].weights[j];
                for (dst, &v) in logits.row_mut(i).iter_mut().zip(outputs.row(r)) {
                    *dst += w * v;
                }
            }
            passes.push(ExpertPass {
                expert: j,
                rows,
                outputs,
                cache,
            });
        }
        Ok((logits, routing, passes))
    }

    /// Single-sample logits, routing decision and features.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, RoutingResult<T>, Vec<T>)> {
        let mut f = self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
        let routing = f.routing.pop().expect("one sample");
        Ok((f.logits.into_vec(), routing, f.z.into_vec()))
    }

    /// Backward pass with the selected sets held fixed.
    ///
    /// `d_weights` / `d_probs` (one row per sample) carry gradients of any
    /// loss defined directly on the sparse weights or dense probabilities.
    pub fn backward(
        &self,
        pass: &RoutedForward<T>,
        d_logits: &Matrix<T>,
        d_weights: Option<&Matrix<T>>,
        d_probs: Option<&Matrix<T>>,
        grads: &mut Self,
    ) {
        let n = pass.z.rows();
        let m = self.experts.len();
        let mut dz = Matrix::zeros(n, pass.z.cols());
        let mut dw = match d_weights {
            Some(w) => w.clone(),
            None => Matrix::zeros(n, m),
        };

        for ep in &pass.experts {
            let j = ep.expert;
            let mut d_out = Matrix::zeros(ep.rows.len(), self.class_count());
            for (r, &i) in ep.rows.iter().enumerate() {
                let w = pass.routing[i].weights[j];
                let dl = d_logits.row(i);
                for (dst, &g) in d_out.row_mut(r).iter_mut().zip(dl) {
                    *dst = w * g;
                }
                dw[(i, j)] += crate::numerics::dot(dl, ep.outputs.row(r));
            }
            let cache = ep
                .cache
                .as_ref()
                .expect("training pass keeps expert caches");
            let d_in = self.experts[j].backward(cache, &d_out, &mut grads.experts[j]);
            for (r, &i) in ep.rows.iter().enumerate() {
                for (dst, &g) in dz.row_mut(i).iter_mut().zip(d_in.row(r)) {
                    *dst += g;
                }
            }
        }

        for i in 0..n {
            let dz_route = self.router.backward(
                pass.z.row(i),
                &pass.routing[i],
                dw.row(i),
                d_probs.map(|p| p.row(i)),
                &mut grads.router,
            );
            for (dst, g) in dz.row_mut(i).iter_mut().zip(dz_route) {
                *dst += g;
            }
        }
        self.extractor
            .backward(&pass.extractor_cache, &dz, &mut grads.extractor);
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            extractor: self.extractor.zeros_like(),
            router: self.router.zeros_like(),
            experts: self.experts.iter().map(Mlp::zeros_like).collect(),
        }
    }
}

impl<T: Scalar> ModelPair<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            shared: SharedModel::new(config, rng)?,
            routed: RoutedModel::new(config, rng)?,
        })
    }
}

impl<T: Scalar> ParamSet<T> for SharedModel<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut t = self.extractor.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.extractor.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut t = self.extractor.decay_mask();
        t.extend(self.head.decay_mask());
        t
    }
}

impl<T: Scalar> ParamSet<T> for RoutedModel<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut t = self.extractor.tensors();
        t.extend(self.router.tensors());
        for e in &self.experts {
            t.extend(e.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.extractor.tensors_mut();
        t.extend(self.router.tensors_mut());
        for e in &mut self.experts {
            t.extend(e.tensors_mut());
        }
        t
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut t = self.extractor.decay_mask();
        t.extend(self.router.decay_mask());
        for e in &self.experts {
            t.extend(e.decay_mask());
        }
        t
    }
}

/// Averages the two branches' softmax outputs; ties go to the lowest class.
pub fn fuse_predictions<T: Scalar>(
    shared_logits: &[T],
    routed_logits: &[T],
) -> Result<(usize, Vec<T>)> {
    if shared_logits.len() != routed_logits.len() || shared_logits.is_empty() {
        return Err(Error::config("fusion needs equal, non-empty logit widths"));
    }
    let half = T::of(0.5);
    let fused: Vec<T> = softmax(shared_logits)
        .into_iter()
        .zip(softmax(routed_logits))
        .map(|(a, b)| (a + b) * half)
        .collect();
    Ok((argmax(&fused), fused))
}
