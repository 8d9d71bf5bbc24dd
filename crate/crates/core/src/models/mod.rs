//! The three learned components (autoencoder, policy, goal checker), their
//! dataset builders and training loops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::DiscretizeError;
use crate::gridworld::GridError;
use crate::plan::PlanError;
use crate::render::RenderError;
use crate::sim::SimError;
use crate::tensornet::NetError;

mod autoencoder;
mod datagen;
mod dataset;
mod goal;
mod policy;
mod train;

pub use autoencoder::{autoencoder_specs, Autoencoder};
#[cfg(test)]
pub(crate) use datagen::sample_expert_pair;
pub use datagen::{
    expert_commands, gen_autoencoder_dataset, gen_goal_dataset, gen_policy_dataset,
    snap_to_free_cell, ExpertPlan, PolicyDataset, TrajectoryEndpoints, GOAL_NEGATIVE_MIN_DISTANCE,
    GOAL_POSITIVE_RADIUS,
};
pub use dataset::{Dataset, DatasetKind, Split, DATASET_MAGIC, DATASET_VERSION};
pub use goal::{goal_checker_specs, GoalCheckInput, GoalChecker};
pub use policy::{policy_specs, Policy, PolicyInput, POLICY_SLOTS};
pub use train::{train_autoencoder, train_goal_checker, train_policy, EpochRecord, TrainReport};

pub type Embedding = Vec<f32>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("discretization failed: {0}")]
    Discretize(#[from] DiscretizeError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("encoder mismatch: expected {expected}, found {found}")]
    EncoderMismatch { expected: String, found: String },
    #[error("gave up after {0} attempts to build a valid sample")]
    RetriesExhausted(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture sizes for all three models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Number of stride-2 stages in the encoder (and decoder).
    pub ae_depth: usize,
    /// Channels after the first stage; doubled per stage up to `ae_max_channels`.
    pub ae_base_channels: usize,
    pub ae_max_channels: usize,
    pub conv_kernel: usize,
    pub deconv_kernel: usize,
    /// Policy hidden widths; the last one is the 16-d bottleneck.
    pub policy_hidden: Vec<usize>,
    /// Goal-branch output width; defaults to `embedding_dim / 4`.
    pub goal_vec: Option<usize>,
    pub goal_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 256,
            ae_depth: 4,
            ae_base_channels: 16,
            ae_max_channels: 256,
            conv_kernel: 3,
            deconv_kernel: 4,
            policy_hidden: vec![1024, 256, 16],
            goal_vec: None,
            goal_hidden: 512,
        }
    }
}

impl ModelConfig {
    pub fn goal_vec_width(&self) -> usize {
        self.goal_vec.unwrap_or(self.embedding_dim / 4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl TrainConfig {
    pub fn autoencoder() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }

    pub fn policy() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }

    pub fn goal_checker() -> Self {
        Self {
            epochs: 80,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::autoencoder()
    }
}
