//! Batch-effect correction for image-based morphological profiles.
//!
//! The crate bundles everything needed to run the correction pipeline end to
//! end on a desk-scale machine:
//!
//! - [`tensor`] — a dense f64 array engine with reverse-mode automatic
//!   differentiation and FFT-based long convolution.
//! - [`hyena`] — the implicitly parameterized bidirectional long-convolution
//!   operator used in place of self-attention.
//! - [`embedding`] / [`encoder`] — continuous-feature embedding (linear
//!   adaptor + feature context + source token) and the stacked-operator
//!   encoder with CLS readout and reconstruction head.
//! - [`training`] — channel-wise masked-morphology loss, supervised
//!   contrastive loss, batching policies, and the three-stage curriculum.
//! - [`baselines`] — ComBat, a simplified Harmony, and control-based sphering.
//! - [`metrics`] — the integration benchmark suite (graph connectivity,
//!   silhouettes, batch classifier, clustering agreement, retrieval mAP) and
//!   aggregate scoring.
//! - [`dataio`] — synthetic data with planted batch effects, CSV ingestion,
//!   per-plate preprocessing, and zero-padded feature alignment.

pub mod baselines;
pub mod dataio;
pub mod embedding;
pub mod encoder;
mod error;
pub mod hyena;
pub mod linalg;
pub mod metrics;
pub mod tensor;
pub mod training;

pub use error::{CoreError, Result};
