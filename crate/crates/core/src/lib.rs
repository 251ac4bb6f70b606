//! Cross-channel retail recommendation.
//!
//! Users buy in an offline and an online channel; some users, items and even
//! individual `(user, item)` pairs overlap across the two. This crate holds
//! the channel-aware attention recommender, its training loop, a BPR
//! baseline, top-k ranking metrics, the data protocol (partition, split,
//! negatives) and a synthetic multi-channel data generator.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod synthgen;
pub mod training;

pub use dataset::{
    Channel, DatasetBundle, Interaction, InteractionStore, PairKind, PerChannel, TrainingExample,
    UserCategory, Vocab,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{CandidateMode, EvalProtocol, MetricReport, Scorer, UserFilter};
pub use model::{LossBreakdown, ModelConfig, Parameters, Variant};
pub use training::{TrainConfig, TrainResult};
