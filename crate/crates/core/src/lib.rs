//! Unbiased risk estimators for learning from multi-complementary-label and unlabeled data.
//!
//! The numeric core (losses, models, optimizer, trainer) is generic over [`Real`]
//! (`f32` or `f64`). Datasets and the verification oracles work in `f64`.
//! Class labels are 1-based everywhere in the public API.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod oracle;
pub mod scalar;
pub mod subsets;
pub mod trainer;
pub mod verify;
pub mod weaklabel;

pub use datasets::{FiniteDistribution, LabeledDataset};
pub use error::{Error, Result};
pub use losses::{Correction, RiskBreakdown, RiskOutput};
pub use matrix::Matrix;
pub use model::{Architecture, Model};
pub use scalar::Real;
pub use trainer::{Estimator, TrainConfig, TrainOutcome, TrainSet};
pub use weaklabel::{MixtureWeights, WeakDataset};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type RiskOutput64 = RiskOutput<f64>;
pub type RiskOutput32 = RiskOutput<f32>;
pub type TrainOutcome64 = TrainOutcome<f64>;
pub type TrainOutcome32 = TrainOutcome<f32>;
