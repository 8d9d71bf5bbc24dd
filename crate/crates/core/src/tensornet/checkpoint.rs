//! Weight checkpoints.
//!
//! Layout: `NAVW`, u32 LE version, u32 LE manifest length, JSON manifest,
//! then every network's parameters followed by its batch-norm running
//! statistics as f32 LE, in manifest and layer order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::network::Sequential;
use super::NetError;
use crate::util::rng_from_seed;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NAVW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Model family, e.g. "autoencoder".
    pub kind: String,
    pub config_hash: String,
    /// Free-form model facts (embedding size, encoder hash, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub networks: Vec<NetworkRecord>,
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        config_hash: &str,
        metadata: serde_json::Value,
        nets: &[(&str, &Sequential<f32>)],
    ) -> Self {
        Self {
            kind: kind.into(),
            config_hash: config_hash.into(),
            metadata,
            networks: nets
                .iter()
                .map(|(name, net)| NetworkRecord {
                    name: (*name).into(),
                    input_shape: net.input_shape().to_vec(),
                    layers: net.specs(),
                })
                .collect(),
        }
    }
}

pub fn write_checkpoint(
    mut out: impl Write,
    checkpoint: &Checkpoint,
    nets: &[&Sequential<f32>],
) -> Result<(), NetError> {
    if nets.len() != checkpoint.networks.len() {
        return Err(NetError::Format("manifest and network count differ".into()));
    }
    let manifest = serde_json::to_vec(checkpoint).map_err(|e| NetError::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(12 + manifest.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest);
    for net in nets {
        for layer in net.layers() {
            for p in layer.params() {
                p.value
                    .data()
                    .iter()
                    .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            }
            for b in layer.buffers() {
                b.data()
                    .iter()
                    .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            }
        }
    }
    out.write_all(&buf).map_err(|e| NetError::Io {
        path: "<stream>".into(),
        source: e,
    })
}

pub fn read_checkpoint(
    mut input: impl Read,
) -> Result<(Checkpoint, Vec<Sequential<f32>>), NetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| NetError::Io {
        path: "<stream>".into(),
        source: e,
    })?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(NetError::Format("not a weight checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let manifest = bytes
        .get(12..12 + mlen)
        .ok_or_else(|| NetError::Format("truncated manifest".into()))?;
    let checkpoint: Checkpoint =
        serde_json::from_slice(manifest).map_err(|e| NetError::Format(e.to_string()))?;
    let mut values = bytes[12 + mlen..].chunks_exact(4);
    if !values.remainder().is_empty() {
        return Err(NetError::Format(
            "trailing bytes after parameter blobs".into(),
        ));
    }
    // Weights are overwritten below, so the init seed is irrelevant.
    let mut rng = rng_from_seed(0);
    let mut nets = Vec::with_capacity(checkpoint.networks.len());
    for record in &checkpoint.networks {
        let mut net =
            Sequential::<f32>::build(record.input_shape.clone(), &record.layers, &mut rng)?;
        for layer in net.layers_mut() {
            let mut fill = |data: &mut [f32]| -> Result<(), NetError> {
                for v in data {
                    let chunk = values
                        .next()
                        .ok_or_else(|| NetError::Format("truncated parameter blob".into()))?;
                    *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                }
                Ok(())
            };
            for p in layer.params_mut() {
                fill(p.value.data_mut())?;
            }
            for b in layer.buffers_mut() {
                fill(b.data_mut())?;
            }
        }
        nets.push(net);
    }
    if values.next().is_some() {
        return Err(NetError::Format(
            "parameter blob longer than manifest".into(),
        ));
    }
    Ok((checkpoint, nets))
}

pub fn save_checkpoint(
    path: &Path,
    checkpoint: &Checkpoint,
    nets: &[&Sequential<f32>],
) -> Result<(), NetError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, checkpoint, nets)?;
    std::fs::write(path, buf).map_err(|e| NetError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Vec<Sequential<f32>>), NetError> {
    let file = std::fs::File::open(path).map_err(|e| NetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_checkpoint(std::io::BufReader::new(file))
}
