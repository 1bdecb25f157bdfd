//! Dense math substrate: matrices, MLP layers, Adam, softmax and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod scalar;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, FdOptions, FdReport};
pub use matrix::{dot, norm, Matrix};
pub use mlp::{Activation, Layer, Mlp, MlpCache};
pub use scalar::Scalar;

/// A model (or gradient buffer) viewed as an ordered list of flat tensors.
///
/// Gradients share the type of the parameters they belong to, so the
/// tensor lists of a model and its gradient line up index by index.
pub trait ParamSet<T: Scalar> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;
    /// Whether each tensor receives weight decay.
    fn decay_mask(&self) -> Vec<bool>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    fn load_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    fn scale_all(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log Σ exp(x)` with max-subtraction.
pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln()
}

/// Cosine similarity; zero when either vector has (near) zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let denom = norm(a) * norm(b);
    if denom <= T::of(1e-300) {
        T::zero()
    } else {
        dot(a, b) / denom
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
