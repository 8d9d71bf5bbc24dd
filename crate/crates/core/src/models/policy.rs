use std::path::Path;

use serde_json::json;

use super::{Embedding, ModelConfig, ModelError};
use crate::discretize::Action;
use crate::pipeline::{HistoryBuffer, HISTORY_LEN};
use crate::render::PANORAMA_VIEWS;
use crate::tensornet::{
    read_checkpoint, softmax_slice, write_checkpoint, Checkpoint, LayerSpec, Sequential, Tensor,
};
use crate::util::Rng;

pub const POLICY_KIND: &str = "policy";
/// Past observations, the current one, then the panoramic goal views.
pub const POLICY_SLOTS: usize = HISTORY_LEN + 1 + PANORAMA_VIEWS;
pub const ACTION_CLASSES: usize = 3;

/// A `13 x d` policy input. Slots: `past[0..4]` (oldest first), current,
/// `goal[0..8]` (view `k` at heading +45k).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    d: usize,
    values: Vec<f32>,
}

impl PolicyInput {
    /// The single constructor used both for dataset generation and at runtime.
    pub fn assemble(history: &HistoryBuffer, goal: &[Embedding]) -> Result<Self, ModelError> {
        let d = history.current().len();
        if goal.len() != PANORAMA_VIEWS || goal.iter().any(|g| g.len() != d) {
            return Err(ModelError::Config(format!(
                "goal needs {PANORAMA_VIEWS} embeddings of width {d}"
            )));
        }
        let mut values = Vec::with_capacity(POLICY_SLOTS * d);
        for past in history.past() {
            values.extend_from_slice(past);
        }
        values.extend_from_slice(history.current());
        for g in goal {
            values.extend_from_slice(g);
        }
        Ok(Self { d, values })
    }

    pub fn from_values(d: usize, values: Vec<f32>) -> Result<Self, ModelError> {
        if values.len() != POLICY_SLOTS * d {
            return Err(ModelError::Config(format!(
                "policy input needs {} values",
                POLICY_SLOTS * d
            )));
        }
        Ok(Self { d, values })
    }

    pub fn embedding_dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn slot(&self, k: usize) -> &[f32] {
        &self.values[k * self.d..(k + 1) * self.d]
    }
}

pub fn policy_specs(cfg: &ModelConfig) -> Result<Vec<LayerSpec>, ModelError> {
    if cfg.policy_hidden.is_empty() || cfg.policy_hidden.contains(&0) {
        return Err(ModelError::Config(
            "policy needs non-empty positive hidden widths".into(),
        ));
    }
    let mut specs = vec![LayerSpec::Flatten];
    let mut width = POLICY_SLOTS * cfg.embedding_dim;
    for &h in &cfg.policy_hidden {
        specs.push(LayerSpec::Dense {
            input: width,
            output: h,
        });
        specs.push(LayerSpec::BatchNorm { features: h });
        specs.push(LayerSpec::ReLU);
        width = h;
    }
    specs.push(LayerSpec::Dense {
        input: width,
        output: ACTION_CLASSES,
    });
    Ok(specs)
}

/// MLP policy producing Forward/Right/Left logits.
pub struct Policy {
    pub net: Sequential<f32>,
    pub encoder_hash: String,
}

impl Policy {
    pub fn build(cfg: &ModelConfig, encoder_hash: &str, rng: &mut Rng) -> Result<Self, ModelError> {
        let net = Sequential::build(
            vec![POLICY_SLOTS, cfg.embedding_dim],
            &policy_specs(cfg)?,
            rng,
        )?;
        Ok(Self {
            net,
            encoder_hash: encoder_hash.into(),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.input_shape()[1]
    }

    /// Action probabilities for each input.
    pub fn probabilities(
        &self,
        inputs: &[PolicyInput],
    ) -> Result<Vec<[f32; ACTION_CLASSES]>, ModelError> {
        let d = self.embedding_dim();
        let mut data = Vec::with_capacity(inputs.len() * POLICY_SLOTS * d);
        for x in inputs {
            if x.d != d {
                return Err(ModelError::Config(format!(
                    "input width {} does not match policy width {d}",
                    x.d
                )));
            }
            data.extend_from_slice(&x.values);
        }
        let logits = self
            .net
            .infer(&Tensor::new(vec![inputs.len(), POLICY_SLOTS, d], data)?)?;
        Ok(logits
            .data()
            .chunks(ACTION_CLASSES)
            .map(|row| {
                let mut p = [0.0; ACTION_CLASSES];
                softmax_slice(row, &mut p);
                p
            })
            .collect())
    }

    /// Most probable action; ties go to the lower class index.
    pub fn act(&self, input: &PolicyInput) -> Result<(Action, [f32; ACTION_CLASSES]), ModelError> {
        let p = self.probabilities(std::slice::from_ref(input))?[0];
        let mut best = 0;
        for k in 1..ACTION_CLASSES {
            if p[k] > p[best] {
                best = k;
            }
        }
        Ok((Action::from_class_index(best).expect("class in range"), p))
    }

    pub fn to_bytes(&self, config_hash: &str) -> Result<Vec<u8>, ModelError> {
        let ckpt = Checkpoint::new(
            POLICY_KIND,
            config_hash,
            json!({ "encoder_hash": self.encoder_hash, "embedding_dim": self.embedding_dim() }),
            &[("policy", &self.net)],
        );
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt, &[&self.net])?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Checkpoint), ModelError> {
        let (ckpt, mut nets) = read_checkpoint(bytes)?;
        if ckpt.kind != POLICY_KIND || nets.len() != 1 {
            return Err(ModelError::Config(format!(
                "checkpoint holds {:?}, not a policy",
                ckpt.kind
            )));
        }
        let encoder_hash = metadata_hash(&ckpt)?;
        Ok((
            Self {
                net: nets.pop().expect("one network"),
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

pub(super) fn metadata_hash(ckpt: &Checkpoint) -> Result<String, ModelError> {
    ckpt.metadata
        .get("encoder_hash")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| ModelError::Config("checkpoint lacks an encoder hash".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;

    fn small() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            policy_hidden: vec![32, 16],
            ..Default::default()
        }
    }

    #[test]
    fn output_is_a_distribution_over_three_actions() {
        let p = Policy::build(&small(), "e", &mut rng_from_seed(0)).unwrap();
        let x = PolicyInput::from_values(8, (0..13 * 8).map(|i| (i as f32 * 0.1).sin()).collect())
            .unwrap();
        let probs = p.probabilities(&[x.clone(), x.clone()]).unwrap();
        assert_eq!(probs.len(), 2);
        assert!((probs[0].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let (action, _) = p.act(&x).unwrap();
        assert_ne!(action, Action::Done);
    }

    #[test]
    fn bottleneck_is_sixteen_wide() {
        let specs = policy_specs(&ModelConfig::default()).unwrap();
        let n = specs.len();
        assert_eq!(
            specs[n - 1],
            LayerSpec::Dense {
                input: 16,
                output: 3
            }
        );
        assert_eq!(
            specs[1],
            LayerSpec::Dense {
                input: 13 * 256,
                output: 1024
            }
        );
    }

    #[test]
    fn slots_follow_history_then_goal() {
        let mut h = HistoryBuffer::new(vec![0.0; 2]);
        for k in 1..=5 {
            h.push(vec![k as f32; 2]);
        }
        let goal: Vec<Embedding> = (0..8).map(|k| vec![100.0 + k as f32; 2]).collect();
        let x = PolicyInput::assemble(&h, &goal).unwrap();
        let firsts: Vec<f32> = (0..13).map(|k| x.slot(k)[0]).collect();
        assert_eq!(
            firsts,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 100.0, 101.0, 102.0, 103.0, 104.0, 105.0, 106.0, 107.0]
        );
    }

    #[test]
    fn checkpoint_keeps_encoder_hash() {
        let p = Policy::build(&small(), "abc", &mut rng_from_seed(0)).unwrap();
        let (back, _) = Policy::from_bytes(&p.to_bytes("cfg").unwrap()).unwrap();
        assert_eq!(back.encoder_hash, "abc");
    }
}
