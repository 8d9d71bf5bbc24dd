use std::path::Path;

use serde_json::json;

use super::policy::metadata_hash;
use super::{Embedding, ModelConfig, ModelError};
use crate::render::PANORAMA_VIEWS;
use crate::tensornet::{
    read_checkpoint, write_checkpoint, Checkpoint, LayerSpec, Mode, Sequential, Tensor,
};
use crate::util::Rng;

pub const GOAL_KIND: &str = "goal_checker";

/// Current embedding plus the eight panoramic goal embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalCheckInput {
    pub current: Embedding,
    pub goal: Vec<Embedding>,
}

impl GoalCheckInput {
    /// Packs into the dataset record layout: current, then goal views.
    pub fn to_record(&self) -> Vec<f32> {
        let mut v = self.current.clone();
        for g in &self.goal {
            v.extend_from_slice(g);
        }
        v
    }
}

/// Goal branch (over a `d x 8` matrix) and fused head specs.
pub fn goal_checker_specs(
    cfg: &ModelConfig,
) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>), ModelError> {
    let d = cfg.embedding_dim;
    let gv = cfg.goal_vec_width();
    if d < 2 || gv == 0 || cfg.goal_hidden == 0 {
        return Err(ModelError::Config(
            "goal checker widths must be positive".into(),
        ));
    }
    let mid = d / 2;
    let branch = vec![
        LayerSpec::Conv1d {
            in_ch: d,
            out_ch: mid,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::BatchNorm { features: mid },
        LayerSpec::ReLU,
        LayerSpec::Conv1d {
            in_ch: mid,
            out_ch: gv,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::BatchNorm { features: gv },
        LayerSpec::ReLU,
        LayerSpec::GlobalAvgPool1d,
    ];
    let head = vec![
        LayerSpec::Dense {
            input: d + gv,
            output: cfg.goal_hidden,
        },
        LayerSpec::BatchNorm {
            features: cfg.goal_hidden,
        },
        LayerSpec::ReLU,
        LayerSpec::Dense {
            input: cfg.goal_hidden,
            output: 1,
        },
        LayerSpec::Sigmoid,
    ];
    Ok((branch, head))
}

/// Dual-branch goal classifier: the goal views pass through a 1-D
/// convolution over the view axis, the result is concatenated with the
/// current embedding and scored by an MLP.
pub struct GoalChecker {
    pub branch: Sequential<f32>,
    pub head: Sequential<f32>,
    pub encoder_hash: String,
}

impl GoalChecker {
    pub fn build(cfg: &ModelConfig, encoder_hash: &str, rng: &mut Rng) -> Result<Self, ModelError> {
        let (b, h) = goal_checker_specs(cfg)?;
        let d = cfg.embedding_dim;
        Ok(Self {
            branch: Sequential::build(vec![d, PANORAMA_VIEWS], &b, rng)?,
            head: Sequential::build(vec![d + cfg.goal_vec_width()], &h, rng)?,
            encoder_hash: encoder_hash.into(),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.branch.input_shape()[0]
    }

    pub fn fused_width(&self) -> usize {
        self.head.input_shape()[0]
    }

    /// Splits packed records (`9 x d` each) into the current block (N, d)
    /// and the channel-major goal block (N, d, 8).
    pub fn split_records(
        &self,
        records: &[f32],
        n: usize,
    ) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        let d = self.embedding_dim();
        let w = (1 + PANORAMA_VIEWS) * d;
        if records.len() != n * w {
            return Err(ModelError::Config(format!(
                "expected {n} records of width {w}"
            )));
        }
        let mut cur = Vec::with_capacity(n * d);
        let mut goal = vec![0.0f32; n * d * PANORAMA_VIEWS];
        for (b, r) in records.chunks(w).enumerate() {
            cur.extend_from_slice(&r[..d]);
            for v in 0..PANORAMA_VIEWS {
                for c in 0..d {
                    goal[(b * d + c) * PANORAMA_VIEWS + v] = r[d + v * d + c];
                }
            }
        }
        Ok((
            Tensor::new(vec![n, d], cur)?,
            Tensor::new(vec![n, d, PANORAMA_VIEWS], goal)?,
        ))
    }

    fn fuse(cur: &Tensor<f32>, g: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let (n, d, gv) = (cur.batch(), cur.sample_len(), g.sample_len());
        let mut fused = Vec::with_capacity(n * (d + gv));
        for b in 0..n {
            fused.extend_from_slice(cur.sample(b));
            fused.extend_from_slice(g.sample(b));
        }
        Ok(Tensor::new(vec![n, d + gv], fused)?)
    }

    /// Probabilities (N, 1) in the given mode.
    pub fn forward(
        &mut self,
        cur: &Tensor<f32>,
        goal: &Tensor<f32>,
        mode: Mode,
    ) -> Result<Tensor<f32>, ModelError> {
        let g = self.branch.forward(goal, mode)?;
        Ok(self.head.forward(&Self::fuse(cur, &g)?, mode)?)
    }

    pub fn backward(&mut self, grad: &Tensor<f32>) -> Result<(), ModelError> {
        let d = self.embedding_dim();
        let dfused = self.head.backward(grad)?;
        let n = dfused.batch();
        let gv = dfused.sample_len() - d;
        let dg: Vec<f32> = (0..n)
            .flat_map(|b| dfused.sample(b)[d..].to_vec())
            .collect();
        self.branch.backward(&Tensor::new(vec![n, gv], dg)?)?;
        Ok(())
    }

    pub fn infer_records(&self, records: &[f32], n: usize) -> Result<Vec<f32>, ModelError> {
        let (cur, goal) = self.split_records(records, n)?;
        let g = self.branch.infer(&goal)?;
        Ok(self.head.infer(&Self::fuse(&cur, &g)?)?.into_data())
    }

    /// Probability that the current view was taken at the goal position.
    pub fn predict(&self, input: &GoalCheckInput) -> Result<f32, ModelError> {
        let d = self.embedding_dim();
        if input.current.len() != d
            || input.goal.len() != PANORAMA_VIEWS
            || input.goal.iter().any(|g| g.len() != d)
        {
            return Err(ModelError::Config(format!(
                "goal check input must be 9 embeddings of width {d}"
            )));
        }
        Ok(self.infer_records(&input.to_record(), 1)?[0])
    }

    pub fn to_bytes(&self, config_hash: &str) -> Result<Vec<u8>, ModelError> {
        let ckpt = Checkpoint::new(
            GOAL_KIND,
            config_hash,
            json!({ "encoder_hash": self.encoder_hash, "embedding_dim": self.embedding_dim() }),
            &[("goal_branch", &self.branch), ("head", &self.head)],
        );
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt, &[&self.branch, &self.head])?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Checkpoint), ModelError> {
        let (ckpt, mut nets) = read_checkpoint(bytes)?;
        if ckpt.kind != GOAL_KIND || nets.len() != 2 {
            return Err(ModelError::Config(format!(
                "checkpoint holds {:?}, not a goal checker",
                ckpt.kind
            )));
        }
        let encoder_hash = metadata_hash(&ckpt)?;
        let head = nets.pop().expect("two networks");
        let branch = nets.pop().expect("two networks");
        Ok((
            Self {
                branch,
                head,
                encoder_hash,
            },
            ckpt,
        ))
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint), ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}
