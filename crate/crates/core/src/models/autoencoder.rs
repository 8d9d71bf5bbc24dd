use std::path::Path;

use serde_json::json;

use super::{Embedding, ModelConfig, ModelError};
use crate::render::{CameraParams, RgbdImage, CHANNELS};
use crate::tensornet::{
    read_checkpoint, write_checkpoint, Checkpoint, LayerSpec, Sequential, Tensor,
};
use crate::util::{sha256_hex, Rng};

pub const AUTOENCODER_KIND: &str = "autoencoder";
const INFER_BATCH: usize = 64;

/// Encoder and decoder layer specs for a `CHANNELS x height x width` image.
pub fn autoencoder_specs(
    cam: &CameraParams,
    cfg: &ModelConfig,
) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>), ModelError> {
    let depth = cfg.ae_depth;
    if depth == 0 {
        return Err(ModelError::Config("autoencoder depth must be >= 1".into()));
    }
    let f = 1usize << depth;
    if cam.width % f != 0 || cam.height % f != 0 {
        return Err(ModelError::Config(format!(
            "image {}x{} is not divisible by 2^{depth}",
            cam.width, cam.height
        )));
    }
    if cfg.embedding_dim == 0 || cfg.ae_base_channels == 0 {
        return Err(ModelError::Config(
            "embedding size and channel count must be positive".into(),
        ));
    }
    let channels: Vec<usize> = (0..depth)
        .map(|i| (cfg.ae_base_channels << i).min(cfg.ae_max_channels.max(1)))
        .collect();
    let (h, w) = (cam.height / f, cam.width / f);
    let last = channels[depth - 1];

    let mut enc = Vec::new();
    let mut c_in = CHANNELS;
    for &c in &channels {
        enc.push(LayerSpec::Conv2d {
            in_ch: c_in,
            out_ch: c,
            kernel: cfg.conv_kernel,
            stride: 2,
        });
        enc.push(LayerSpec::BatchNorm { features: c });
        enc.push(LayerSpec::ReLU);
        c_in = c;
    }
    enc.push(LayerSpec::Flatten);
    enc.push(LayerSpec::Dense {
        input: last * h * w,
        output: cfg.embedding_dim,
    });

    let mut dec = vec![
        LayerSpec::Dense {
            input: cfg.embedding_dim,
            output: last * h * w,
        },
        LayerSpec::Reshape {
            shape: vec![last, h, w],
        },
    ];
    for i in (0..depth).rev() {
        let out = if i == 0 { CHANNELS } else { channels[i - 1] };
        dec.push(LayerSpec::BatchNorm {
            features: channels[i],
        });
        dec.push(LayerSpec::TransposedConv2d {
            in_ch: channels[i],
            out_ch: out,
            kernel: cfg.deconv_kernel,
            stride: 2,
        });
        if i > 0 {
            dec.push(LayerSpec::ReLU);
        }
    }
    dec.push(LayerSpec::Sigmoid);
    Ok((enc, dec))
}

/// Convolutional autoencoder over RGBD images (CHW layout).
pub struct Autoencoder {
    pub encoder: Sequential<f32>,
    pub decoder: Sequential<f32>,
}

impl Autoencoder {
    pub fn build(cam: &CameraParams, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        let (enc, dec) = autoencoder_specs(cam, cfg)?;
        let encoder = Sequential::build(vec![CHANNELS, cam.height, cam.width], &enc, rng)?;
        let decoder = Sequential::build(vec![cfg.embedding_dim], &dec, rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.output_shape()[0]
    }

    pub fn image_shape(&self) -> &[usize] {
        self.encoder.input_shape()
    }

    fn check_image(&self, img: &RgbdImage) -> Result<(), ModelError> {
        let s = self.image_shape();
        if img.height() != s[1] || img.width() != s[2] {
            return Err(ModelError::Config(format!(
                "image {}x{} does not match encoder input {}x{}",
                img.width(),
                img.height(),
                s[2],
                s[1]
            )));
        }
        Ok(())
    }

    pub fn encode(&self, img: &RgbdImage) -> Result<Embedding, ModelError> {
        Ok(self
            .encode_batch(std::slice::from_ref(img))?
            .pop()
            .expect("one embedding"))
    }

    /// Eval-mode encoding; identical images give identical embeddings.
    pub fn encode_batch(&self, imgs: &[RgbdImage]) -> Result<Vec<Embedding>, ModelError> {
        let d = self.embedding_dim();
        let mut out = Vec::with_capacity(imgs.len());
        for chunk in imgs.chunks(INFER_BATCH) {
            let mut data =
                Vec::with_capacity(chunk.len() * self.image_shape().iter().product::<usize>());
            for img in chunk {
                self.check_image(img)?;
                data.extend(img.to_chw());
            }
            let mut shape = vec![chunk.len()];
            shape.extend_from_slice(self.image_shape());
            let z = self.encoder.infer(&Tensor::new(shape, data)?)?;
            out.extend(z.data().chunks(d).map(|c| c.to_vec()));
        }
        Ok(out)
    }

    /// Eval-mode reconstruction of CHW images packed in a tensor.
    pub fn reconstruct(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let z = self.encoder.infer(x)?;
        Ok(self.decoder.infer(&z)?)
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint::new(
            AUTOENCODER_KIND,
            config_hash,
            json!({ "embedding_dim": self.embedding_dim() }),
            &[("encoder", &self.encoder), ("decoder", &self.decoder)],
        )
    }

    pub fn to_bytes(&self, config_hash: &str) -> Result<Vec<u8>, ModelError> {
        let mut buf = Vec::new();
        write_checkpoint(
            &mut buf,
            &self.checkpoint(config_hash),
            &[&self.encoder, &self.decoder],
        )?;
        Ok(buf)
    }

    /// Parses a checkpoint; returns the model, its manifest and the hash that
    /// downstream artifacts record as their encoder.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Checkpoint, String), ModelError> {
        let (ckpt, mut nets) = read_checkpoint(bytes)?;
        if ckpt.kind != AUTOENCODER_KIND || nets.len() != 2 {
            return Err(ModelError::Config(format!(
                "checkpoint holds {:?}, not an autoencoder",
                ckpt.kind
            )));
        }
        let decoder = nets.pop().expect("two networks");
        let encoder = nets.pop().expect("two networks");
        Ok((Self { encoder, decoder }, ckpt, sha256_hex(bytes)))
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint, String), ModelError> {
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
    use crate::util::rng_from_seed;

    #[test]
    fn default_shapes() {
        let cam = CameraParams::default();
        let ae = Autoencoder::build(&cam, &ModelConfig::default(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(ae.encoder.output_shape(), &[256]);
        assert_eq!(ae.decoder.output_shape(), &[4, 32, 32]);
        let x = Tensor::new(vec![2, 4, 32, 32], vec![0.5f32; 2 * 4096]).unwrap();
        let y = ae.reconstruct(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn full_scale_ratio_is_64() {
        let cam = CameraParams {
            width: 256,
            height: 256,
            ..Default::default()
        };
        let cfg = ModelConfig {
            embedding_dim: 4096,
            ae_depth: 6,
            ..Default::default()
        };
        let (enc, dec) = autoencoder_specs(&cam, &cfg).unwrap();
        assert_eq!(
            enc.last(),
            Some(&LayerSpec::Dense {
                input: 256 * 4 * 4,
                output: 4096
            })
        );
        assert_eq!(
            enc.iter()
                .filter(|s| matches!(s, LayerSpec::Conv2d { .. }))
                .count(),
            6
        );
        assert_eq!(
            dec.iter()
                .filter(|s| matches!(s, LayerSpec::TransposedConv2d { .. }))
                .count(),
            6
        );
        assert_eq!(256 * 256 * CHANNELS / cfg.embedding_dim, 64);
    }

    #[test]
    fn rejects_indivisible_images() {
        let cam = CameraParams {
            width: 24,
            height: 24,
            ..Default::default()
        };
        assert!(matches!(
            autoencoder_specs(&cam, &ModelConfig::default()),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_preserves_embeddings() {
        let cam = CameraParams::default();
        let cfg = ModelConfig {
            embedding_dim: 32,
            ae_base_channels: 4,
            ..Default::default()
        };
        let ae = Autoencoder::build(&cam, &cfg, &mut rng_from_seed(1)).unwrap();
        let img = RgbdImage::from_data(32, 32, (0..4096).map(|i| (i % 17) as f32 / 17.0).collect())
            .unwrap();
        let bytes = ae.to_bytes(&sha256_hex(b"c")).unwrap();
        let (back, ckpt, hash) = Autoencoder::from_bytes(&bytes).unwrap();
        assert_eq!(ckpt.kind, AUTOENCODER_KIND);
        assert_eq!(hash, sha256_hex(&bytes));
        assert_eq!(back.encode(&img).unwrap(), ae.encode(&img).unwrap());
    }
}
