//! Predictive sample assignment (PSA) for semantically coherent
//! out-of-distribution detection.
//!
//! A small differentiable classifier is trained on a labeled in-distribution
//! set plus an unlabeled pool that mixes in-distribution and
//! out-of-distribution samples. Each epoch the pool is split three ways by
//! energy-score quantile thresholds (confident ID, confident OOD, discarded),
//! the model is trained with cross-entropy, outlier exposure and a concept
//! contrastive loss, and finally retrained on the last selection.
//!
//! All numerical code is generic over [`Scalar`] (`f32` / `f64`); the type
//! aliases at the bottom of this file fix the precision for common uses.

pub mod assignment;
pub mod benchdata;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod rng;
pub mod scalar;
pub mod scoring;
pub mod trainer;

pub use error::{PsaError, Result};
pub use scalar::Scalar;

pub use assignment::{AssignmentPartition, Thresholds};
pub use benchdata::{Benchmark, BenchmarkSpec, HiddenFlag, LabeledSet, UnlabeledPool};
pub use losses::{Concept, LossWeights};
pub use metrics::{EvalInputs, MetricsReport, SelectionStats};
pub use netcore::{Architecture, ForwardOutputs, ModelParameters, ParamSet};
pub use scoring::{ScoreKind, ScoreMethod};
pub use trainer::{AuxLoss, EpochLog, PsaOutcome, Schedule, Strategy, TrainConfig};

/// Double-precision model parameters (the default for training and gradient checks).
pub type Params64 = ModelParameters<f64>;
/// Single-precision model parameters.
pub type Params32 = ModelParameters<f32>;
pub type Benchmark64 = Benchmark<f64>;
pub type Benchmark32 = Benchmark<f32>;
pub type LabeledSet64 = LabeledSet<f64>;
pub type UnlabeledPool64 = UnlabeledPool<f64>;
pub type TrainConfig64 = TrainConfig<f64>;
pub type PsaOutcome64 = PsaOutcome<f64>;
