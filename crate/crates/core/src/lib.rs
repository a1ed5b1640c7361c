//! Balanced direct preference optimization on a desk-scale autoregressive model.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure computation:
//!
//! * [`model`]: a fixed-window neural language model with hand-written
//!   reverse-mode gradients, used both as the trainable policy and as the frozen
//!   reference.
//! * [`info`]: token-averaged prior and conditional entropies and their
//!   difference, the mutual information used to measure how well the model
//!   comprehends a response.
//! * [`losses`]: DPO, the balanced-weight inner loss, the stop-gradient scaled
//!   balanced loss and the two ablations, with gradients from a small scalar
//!   [`tape`].
//! * [`dataset`]: preference pairs, the synthetic corpus, annotation and the
//!   per-label median-gap split.
//! * [`train`]: deterministic minibatch training with reward-margin metrics.
//! * [`gradcheck`]: finite-difference and closed-form checks of every gradient.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod info;
pub mod losses;
pub mod math;
pub mod model;
pub mod tape;
pub mod train;
pub mod vocab;

pub use dataset::{AnnotatedDataset, AnnotatedRecord, DatasetSplit, PreferencePair, SafetyLabel};
pub use error::{Error, Result};
pub use info::MiAnnotation;
pub use losses::{BalancedWeights, ImplicitReward, LossVariant};
pub use model::{Model, ModelConfig, PolicyParameters, ReferenceSnapshot};
pub use train::{MetricsRow, Optimizer, TrainConfig};
pub use vocab::{TokenSequence, Vocabulary, BOS_ID};
