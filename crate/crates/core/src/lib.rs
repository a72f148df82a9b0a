//! Multi-modal multi-task transformer for meme affect classification.
//!
//! Frozen per-modality feature vectors (image backbone, CLIP image encoder,
//! sentence encoder) are projected to a shared token space, encoded as an
//! unordered set by a small transformer, mean-pooled, and decoded by five
//! task heads: ordinal (CORAL) heads for sentiment, humour, sarcasm and
//! offensiveness, plus a binary motivation head.
//!
//! The crate covers the whole pipeline: the feature file format and label
//! schema, synthetic data, training with a cyclical learning rate and
//! oversampling, weighted-F1 evaluation in the shared-task layout, and a CLI.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod ordinal;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::SplitMix64;
pub use tensor::{Parameter, Parameterized, Tensor};
