//! Robust knowledge distillation with power divergences.
//!
//! The crate is organised bottom-up:
//!
//! - [`divergence`]: the power-divergence family, softmax, and exact gradients.
//! - [`loss`]: decoupled distillation objectives built on top of it.
//! - [`robust_stats`]: influence functions and goodness-of-fit testing.
//! - [`neural`]: a small MLP with hand-written backpropagation and SGD.
//! - [`data`]: synthetic datasets, CSV ingestion, and JSON persistence.
//! - [`lab`]: teacher training, noisy teachers, and student distillation runs.
//! - [`verify`]: randomized self-checks shared by tests and the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod divergence;
pub mod error;
pub mod lab;
pub mod loss;
pub mod neural;
pub mod robust_stats;
pub mod seed;
pub mod verify;

pub use data::{DatasetSpec, LabeledDataset};
pub use divergence::{DivergenceOrder, LogitVector, ProbVector, Temperature};
pub use error::{Error, Result};
pub use lab::{ExperimentConfig, LossSpec, NoiseModel, RunRecord};
pub use loss::{DecoupledDistributions, LossOutput, RedistillConfig};
pub use neural::{Mlp, MlpSpec, SgdConfig};
pub use robust_stats::{AlternativeSpec, InfluenceResult, PowerEstimate};
