//! Binary dataset container.
//!
//! Header (little-endian): `NAVD`, u32 version, u8 kind tag, 32-byte encoder
//! hash (zeros when absent), 32-byte config hash, u64 record count, u32
//! floats per record. Each record is that many f32 values followed by a
//! label byte and a split byte (0 train, 1 test).

use std::io::{Read, Write};
use std::path::Path;

use super::ModelError;

pub const DATASET_MAGIC: &[u8; 4] = b"NAVD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 32 + 32 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Autoencoder,
    Policy,
    Goal,
}

impl DatasetKind {
    pub fn tag(self) -> u8 {
        match self {
            DatasetKind::Autoencoder => 1,
            DatasetKind::Policy => 2,
            DatasetKind::Goal => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DatasetKind::Autoencoder),
            2 => Some(DatasetKind::Policy),
            3 => Some(DatasetKind::Goal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Autoencoder => "AE",
            DatasetKind::Policy => "POLICY",
            DatasetKind::Goal => "GOAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// Hex SHA-256 of the encoder checkpoint the features came from.
    pub encoder_hash: Option<String>,
    /// Hex SHA-256 of the producing configuration.
    pub config_hash: String,
    pub width: usize,
    features: Vec<f32>,
    labels: Vec<u8>,
    splits: Vec<Split>,
}

fn hash_to_bytes(hex_str: &str) -> Result<[u8; 32], ModelError> {
    let v = hex::decode(hex_str)
        .map_err(|e| ModelError::Dataset(format!("bad hash {hex_str:?}: {e}")))?;
    v.try_into()
        .map_err(|_| ModelError::Dataset(format!("hash {hex_str:?} is not 32 bytes")))
}

impl Dataset {
    pub fn new(
        kind: DatasetKind,
        width: usize,
        encoder_hash: Option<String>,
        config_hash: String,
    ) -> Self {
        Self {
            kind,
            encoder_hash,
            config_hash,
            width,
            features: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[f32], label: u8, split: Split) -> Result<(), ModelError> {
        if features.len() != self.width {
            return Err(ModelError::Dataset(format!(
                "record has {} values, expected {}",
                features.len(),
                self.width
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Dataset(
                "record contains non-finite values".into(),
            ));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.splits.push(split);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Features of the given records packed row-major.
    pub fn gather(&self, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            out.extend_from_slice(self.features(i));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.len() * (self.width * 4 + 2));
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.push(self.kind.tag());
        match &self.encoder_hash {
            Some(h) => buf.extend_from_slice(&hash_to_bytes(h)?),
            None => buf.extend_from_slice(&[0u8; 32]),
        }
        buf.extend_from_slice(&hash_to_bytes(&self.config_hash)?);
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for i in 0..self.len() {
            for v in self.features(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.push(self.labels[i]);
            buf.push(match self.splits[i] {
                Split::Train => 0,
                Split::Test => 1,
            });
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Dataset(m.to_string());
        if bytes.len() < HEADER_LEN || &bytes[..4] != DATASET_MAGIC {
            return Err(bad("not a dataset file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != DATASET_VERSION {
            return Err(ModelError::Dataset(format!(
                "unsupported dataset version {version}"
            )));
        }
        let kind = DatasetKind::from_tag(bytes[8]).ok_or_else(|| bad("unknown dataset kind"))?;
        let enc = &bytes[9..41];
        let encoder_hash = if enc.iter().all(|&b| b == 0) {
            None
        } else {
            Some(hex::encode(enc))
        };
        let config_hash = hex::encode(&bytes[41..73]);
        let count = u64::from_le_bytes(bytes[73..81].try_into().expect("8 bytes")) as usize;
        let width = u32::from_le_bytes(bytes[81..85].try_into().expect("4 bytes")) as usize;
        let rec = width * 4 + 2;
        if bytes.len() != HEADER_LEN + count * rec {
            return Err(bad("dataset length does not match its header"));
        }
        let mut ds = Dataset::new(kind, width, encoder_hash, config_hash);
        ds.features.reserve(count * width);
        for r in bytes[HEADER_LEN..].chunks_exact(rec) {
            ds.features.extend(
                r[..width * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
            );
            ds.labels.push(r[width * 4]);
            ds.splits.push(match r[width * 4 + 1] {
                0 => Split::Train,
                1 => Split::Test,
                _ => return Err(bad("bad split byte")),
            });
        }
        Ok(ds)
    }

    pub fn write(&self, mut out: impl Write) -> Result<(), ModelError> {
        out.write_all(&self.to_bytes()?)
            .map_err(|e| ModelError::Io {
                path: "<stream>".into(),
                source: e,
            })
    }

    pub fn read(mut input: impl Read) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| ModelError::Io {
            path: "<stream>".into(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sha256_hex;

    #[test]
    fn round_trip_and_corruption() {
        let mut ds = Dataset::new(
            DatasetKind::Goal,
            3,
            Some(sha256_hex(b"enc")),
            sha256_hex(b"cfg"),
        );
        ds.push(&[0.1, 0.2, 0.3], 1, Split::Train).unwrap();
        ds.push(&[-1.0, 0.0, 2.5], 0, Split::Test).unwrap();
        assert!(ds.push(&[1.0], 0, Split::Train).is_err());
        assert!(ds.push(&[f32::NAN, 0.0, 0.0], 0, Split::Train).is_err());
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), ds);
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Dataset::from_bytes(&bad).is_err());
        assert_eq!(ds.indices(Split::Test), vec![1]);
    }

    #[test]
    fn absent_encoder_hash_round_trips() {
        let mut ds = Dataset::new(DatasetKind::Autoencoder, 2, None, sha256_hex(b"cfg"));
        ds.push(&[0.0, 1.0], 0, Split::Train).unwrap();
        let back = Dataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        assert_eq!(back.encoder_hash, None);
        assert_eq!(back.kind.name(), "AE");
    }
}
