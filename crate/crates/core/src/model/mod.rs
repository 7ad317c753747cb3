//! Small differentiable heads over precomputed region features.
//!
//! Three heads share one set of machinery:
//! - the predicate classifier ([`MlpHead`] over the concatenated subject and
//!   object features),
//! - the object classifier ([`MlpHead`] over one region feature),
//! - the pair relevance predictor ([`RelevanceHead`]).
//!
//! Every head exposes its parameters as one flat vector in serialization
//! order, which is what the gradient routines and the finite-difference
//! checks operate on.

mod loss;
mod mlp;
mod relevance;
mod serialize;
mod train;

pub use loss::{batch_gradients, batch_loss, logit_gradient, sample_loss, LossTarget};
pub use mlp::{Activation, Layer, MlpHead};
pub use relevance::{RelevanceHead, ANNOTATED_INDEX};
pub use serialize::{HeadRole, SavedHead, StoredHead};
pub use train::{
    object_samples, predicate_input, predicate_samples, relevance_samples, train_object,
    train_predicate, train_relevance, DistillMode, Knowledge, PredicateSample, RelevanceSample,
    TrainConfig, TrainOutput,
};

use crate::error::Result;

/// A head that maps one input to a vector of logits and can backpropagate.
pub trait Head {
    type Input;
    type Cache;

    fn num_params(&self) -> usize;

    /// Parameters flattened in layer order: each weight matrix row-major,
    /// followed by its bias.
    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    fn num_outputs(&self) -> usize;

    fn forward(&self, input: &Self::Input) -> Result<(Vec<f64>, Self::Cache)>;

    /// Accumulates `scale · ∂logits/∂θ · d_logits` into `grad`.
    fn backward(&self, cache: &Self::Cache, d_logits: &[f64], scale: f64, grad: &mut [f64]);
}

/// Seeded Glorot-uniform initializer.
pub(crate) fn glorot(
    rng: &mut impl rand::Rng,
    fan_in: usize,
    fan_out: usize,
    len: usize,
) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}
