//! Mini-batch Adam training loops. Each loop evaluates the held-out split
//! after every epoch and restores the best epoch's weights at the end.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetKind, Split};
use super::goal::GoalChecker;
use super::policy::{Policy, ACTION_CLASSES, POLICY_SLOTS};
use super::{Autoencoder, ModelConfig, ModelError, TrainConfig};
use crate::render::CameraParams;
use crate::tensornet::{
    binary_cross_entropy, cross_entropy, mse, AdamState, Mode, Sequential, Tensor,
};
use crate::util::{child_seed, rng_from_seed, Rng};

const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x5407;
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    /// Not serialized, so saved reports are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

type Snapshot = Vec<Vec<f32>>;

fn snapshot(nets: &[&Sequential<f32>]) -> Snapshot {
    let mut out = Vec::new();
    for net in nets {
        for layer in net.layers() {
            out.extend(layer.params().iter().map(|p| p.value.data().to_vec()));
            out.extend(layer.buffers().iter().map(|b| b.data().to_vec()));
        }
    }
    out
}

fn restore(nets: &mut [&mut Sequential<f32>], snap: &Snapshot) {
    let mut it = snap.iter();
    for net in nets.iter_mut() {
        for layer in net.layers_mut() {
            for p in layer.params_mut() {
                p.value
                    .data_mut()
                    .copy_from_slice(it.next().expect("snapshot matches network"));
            }
            for b in layer.buffers_mut() {
                b.data_mut()
                    .copy_from_slice(it.next().expect("snapshot matches network"));
            }
        }
    }
}

fn check_dataset(
    ds: &Dataset,
    kind: DatasetKind,
    cfg: &TrainConfig,
) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if ds.kind != kind {
        return Err(ModelError::Dataset(format!(
            "expected a {} dataset, got {}",
            kind.name(),
            ds.kind.name()
        )));
    }
    if cfg.batch_size < 2 || cfg.epochs == 0 {
        return Err(ModelError::Config(
            "training needs batch size >= 2 and at least one epoch".into(),
        ));
    }
    let train = ds.indices(Split::Train);
    let test = ds.indices(Split::Test);
    if train.is_empty() {
        return Err(ModelError::Dataset("no training records".into()));
    }
    Ok((train, test))
}

/// Shuffled mini-batches; a trailing single record is dropped because batch
/// statistics are undefined for it.
fn epoch_batches(train: &[usize], batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    order
        .chunks(batch)
        .filter(|c| c.len() >= 2 || train.len() == 1)
        .map(|c| c.to_vec())
        .collect()
}

fn finite(loss: f32, epoch: usize) -> Result<f64, ModelError> {
    if loss.is_finite() {
        Ok(loss as f64)
    } else {
        Err(ModelError::NonFiniteLoss { epoch })
    }
}

fn batch_tensor(
    ds: &Dataset,
    idx: &[usize],
    per_sample: &[usize],
) -> Result<Tensor<f32>, ModelError> {
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(per_sample);
    Ok(Tensor::new(shape, ds.gather(idx))?)
}

pub fn train_autoencoder(
    ds: &Dataset,
    cam: &CameraParams,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Autoencoder, TrainReport), ModelError> {
    let (train, test) = check_dataset(ds, DatasetKind::Autoencoder, cfg)?;
    if ds.width != cam.values_per_image() {
        return Err(ModelError::Dataset(
            "image size does not match the camera".into(),
        ));
    }
    let t0 = Instant::now();
    let mut ae = Autoencoder::build(
        cam,
        model,
        &mut rng_from_seed(child_seed(seed, STREAM_INIT, 0)),
    )?;
    let mut shuffle = rng_from_seed(child_seed(seed, STREAM_SHUFFLE, 0));
    let shape = ae.image_shape().to_vec();
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Snapshot)> = None;
    for epoch in 1..=cfg.epochs {
        let (mut sum, mut n) = (0.0, 0usize);
        for idx in epoch_batches(&train, cfg.batch_size, &mut shuffle) {
            let x = batch_tensor(ds, &idx, &shape)?;
            let z = ae.encoder.forward(&x, Mode::Train)?;
            let y = ae.decoder.forward(&z, Mode::Train)?;
            let (loss, g) = mse(&y, &x)?;
            sum += finite(loss, epoch)? * idx.len() as f64;
            n += idx.len();
            let dz = ae.decoder.backward(&g)?;
            ae.encoder.backward(&dz)?;
            let mut params = ae.encoder.params_mut();
            params.extend(ae.decoder.params_mut());
            adam.step(&mut params)?;
        }
        let eval_idx = if test.is_empty() { &train } else { &test };
        let mut test_sum = 0.0;
        for idx in eval_idx.chunks(EVAL_BATCH) {
            let x = batch_tensor(ds, idx, &shape)?;
            let (loss, _) = mse(&ae.reconstruct(&x)?, &x)?;
            test_sum += finite(loss, epoch)? * idx.len() as f64;
        }
        let test_loss = test_sum / eval_idx.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss: sum / n.max(1) as f64,
            test_loss,
            train_accuracy: None,
            test_accuracy: None,
        });
        if best.as_ref().is_none_or(|(b, _, _)| test_loss < *b) {
            best = Some((test_loss, epoch, snapshot(&[&ae.encoder, &ae.decoder])));
        }
    }
    let (_, best_epoch, snap) = best.expect("at least one epoch");
    restore(&mut [&mut ae.encoder, &mut ae.decoder], &snap);
    ae.encoder.clear_cache();
    ae.decoder.clear_cache();
    let report = TrainReport {
        model: "autoencoder".into(),
        seed,
        epochs,
        best_epoch,
        wall_time_s: t0.elapsed().as_secs_f64(),
        checkpoint_path: None,
    };
    Ok((ae, report))
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

fn encoder_of(ds: &Dataset) -> Result<String, ModelError> {
    ds.encoder_hash
        .clone()
        .ok_or_else(|| ModelError::Dataset("dataset carries no encoder hash".into()))
}

pub fn train_policy(
    ds: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Policy, TrainReport), ModelError> {
    let (train, test) = check_dataset(ds, DatasetKind::Policy, cfg)?;
    let encoder_hash = encoder_of(ds)?;
    if ds.width != POLICY_SLOTS * model.embedding_dim {
        return Err(ModelError::Dataset(
            "record width does not match the embedding size".into(),
        ));
    }
    if ds.labels().iter().any(|&l| l as usize >= ACTION_CLASSES) {
        return Err(ModelError::Dataset(
            "policy labels must be action classes".into(),
        ));
    }
    let t0 = Instant::now();
    let mut policy = Policy::build(
        model,
        &encoder_hash,
        &mut rng_from_seed(child_seed(seed, STREAM_INIT, 1)),
    )?;
    let mut shuffle = rng_from_seed(child_seed(seed, STREAM_SHUFFLE, 1));
    let shape = [POLICY_SLOTS, model.embedding_dim];
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let labels_of = |idx: &[usize]| {
        idx.iter()
            .map(|&i| ds.label(i) as usize)
            .collect::<Vec<_>>()
    };
    for epoch in 1..=cfg.epochs {
        let (mut sum, mut correct, mut n) = (0.0, 0usize, 0usize);
        for idx in epoch_batches(&train, cfg.batch_size, &mut shuffle) {
            let x = batch_tensor(ds, &idx, &shape)?;
            let labels = labels_of(&idx);
            let logits = policy.net.forward(&x, Mode::Train)?;
            let (loss, g) = cross_entropy(&logits, &labels)?;
            sum += finite(loss, epoch)? * idx.len() as f64;
            n += idx.len();
            correct += logits
                .data()
                .chunks(ACTION_CLASSES)
                .zip(&labels)
                .filter(|(r, &l)| argmax(r) == l)
                .count();
            policy.net.backward(&g)?;
            adam.step(&mut policy.net.params_mut())?;
        }
        let eval_idx = if test.is_empty() { &train } else { &test };
        let (mut tsum, mut tcorrect) = (0.0, 0usize);
        for idx in eval_idx.chunks(EVAL_BATCH) {
            let labels = labels_of(idx);
            let logits = policy.net.infer(&batch_tensor(ds, idx, &shape)?)?;
            let (loss, _) = cross_entropy(&logits, &labels)?;
            tsum += finite(loss, epoch)? * idx.len() as f64;
            tcorrect += logits
                .data()
                .chunks(ACTION_CLASSES)
                .zip(&labels)
                .filter(|(r, &l)| argmax(r) == l)
                .count();
        }
        let acc = tcorrect as f64 / eval_idx.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss: sum / n.max(1) as f64,
            test_loss: tsum / eval_idx.len() as f64,
            train_accuracy: Some(correct as f64 / n.max(1) as f64),
            test_accuracy: Some(acc),
        });
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, snapshot(&[&policy.net])));
        }
    }
    let (_, best_epoch, snap) = best.expect("at least one epoch");
    restore(&mut [&mut policy.net], &snap);
    policy.net.clear_cache();
    let report = TrainReport {
        model: "policy".into(),
        seed,
        epochs,
        best_epoch,
        wall_time_s: t0.elapsed().as_secs_f64(),
        checkpoint_path: None,
    };
    Ok((policy, report))
}

pub fn train_goal_checker(
    ds: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(GoalChecker, TrainReport), ModelError> {
    let (train, test) = check_dataset(ds, DatasetKind::Goal, cfg)?;
    let encoder_hash = encoder_of(ds)?;
    let t0 = Instant::now();
    let mut gc = GoalChecker::build(
        model,
        &encoder_hash,
        &mut rng_from_seed(child_seed(seed, STREAM_INIT, 2)),
    )?;
    if ds.width != (1 + crate::render::PANORAMA_VIEWS) * model.embedding_dim {
        return Err(ModelError::Dataset(
            "record width does not match the embedding size".into(),
        ));
    }
    let mut shuffle = rng_from_seed(child_seed(seed, STREAM_SHUFFLE, 2));
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let labels_of = |idx: &[usize]| idx.iter().map(|&i| ds.label(i) as f32).collect::<Vec<_>>();
    let hits = |p: &[f32], y: &[f32]| {
        p.iter()
            .zip(y)
            .filter(|(&p, &y)| (p > 0.5) == (y > 0.5))
            .count()
    };
    for epoch in 1..=cfg.epochs {
        let (mut sum, mut correct, mut n) = (0.0, 0usize, 0usize);
        for idx in epoch_batches(&train, cfg.batch_size, &mut shuffle) {
            let (cur, goal) = gc.split_records(&ds.gather(&idx), idx.len())?;
            let labels = labels_of(&idx);
            let p = gc.forward(&cur, &goal, Mode::Train)?;
            let (loss, g) = binary_cross_entropy(&p, &labels)?;
            sum += finite(loss, epoch)? * idx.len() as f64;
            n += idx.len();
            correct += hits(p.data(), &labels);
            gc.backward(&g)?;
            let mut params = gc.branch.params_mut();
            params.extend(gc.head.params_mut());
            adam.step(&mut params)?;
        }
        let eval_idx = if test.is_empty() { &train } else { &test };
        let (mut tsum, mut tcorrect) = (0.0, 0usize);
        for idx in eval_idx.chunks(EVAL_BATCH) {
            let labels = labels_of(idx);
            let p = gc.infer_records(&ds.gather(idx), idx.len())?;
            let (loss, _) =
                binary_cross_entropy(&Tensor::new(vec![idx.len(), 1], p.clone())?, &labels)?;
            tsum += finite(loss, epoch)? * idx.len() as f64;
            tcorrect += hits(&p, &labels);
        }
        let acc = tcorrect as f64 / eval_idx.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss: sum / n.max(1) as f64,
            test_loss: tsum / eval_idx.len() as f64,
            train_accuracy: Some(correct as f64 / n.max(1) as f64),
            test_accuracy: Some(acc),
        });
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, snapshot(&[&gc.branch, &gc.head])));
        }
    }
    let (_, best_epoch, snap) = best.expect("at least one epoch");
    restore(&mut [&mut gc.branch, &mut gc.head], &snap);
    gc.branch.clear_cache();
    gc.head.clear_cache();
    let report = TrainReport {
        model: "goal_checker".into(),
        seed,
        epochs,
        best_epoch,
        wall_time_s: t0.elapsed().as_secs_f64(),
        checkpoint_path: None,
    };
    Ok((gc, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sha256_hex;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embedding_dim: 16,
            ae_base_channels: 4,
            policy_hidden: vec![32, 16],
            goal_hidden: 16,
            ..Default::default()
        }
    }

    #[test]
    fn autoencoder_overfits_one_image() {
        let cam = CameraParams {
            width: 16,
            height: 16,
            ..Default::default()
        };
        let cfg = ModelConfig {
            ae_depth: 2,
            ..tiny()
        };
        let mut ds = Dataset::new(
            DatasetKind::Autoencoder,
            cam.values_per_image(),
            None,
            sha256_hex(b"c"),
        );
        let img: Vec<f32> = (0..cam.values_per_image())
            .map(|i| if (i / 16) % 2 == 0 { 0.8 } else { 0.2 })
            .collect();
        // BatchNorm needs two samples per batch; use the same image twice.
        ds.push(&img, 0, Split::Train).unwrap();
        ds.push(&img, 0, Split::Train).unwrap();
        let tc = TrainConfig {
            epochs: 400,
            batch_size: 2,
            learning_rate: 3e-3,
        };
        let (ae, report) = train_autoencoder(&ds, &cam, &cfg, &tc, 1).unwrap();
        let x = Tensor::new(vec![1, 4, 16, 16], img).unwrap();
        let (loss, _) = mse(&ae.reconstruct(&x).unwrap(), &x).unwrap();
        assert!((loss as f64 - report.best().test_loss).abs() < 1e-6);
        assert!(
            report.best().test_loss < 0.05 * report.epochs[0].test_loss,
            "{loss}"
        );
        assert_eq!(report.epochs.len(), 400);
        assert!(report
            .epochs
            .iter()
            .enumerate()
            .all(|(i, e)| e.epoch == i + 1));
    }

    fn separable_policy_data() -> Dataset {
        let d = 16;
        let mut ds = Dataset::new(
            DatasetKind::Policy,
            POLICY_SLOTS * d,
            Some(sha256_hex(b"e")),
            sha256_hex(b"c"),
        );
        let mut rng = rng_from_seed(4);
        for i in 0..300 {
            let class = i % 3;
            let x: Vec<f32> = (0..POLICY_SLOTS * d)
                .map(|j| {
                    let noise: f32 = rand::Rng::random::<f32>(&mut rng) * 0.5;
                    if j % 3 == class {
                        1.0 + noise
                    } else {
                        noise
                    }
                })
                .collect();
            ds.push(
                &x,
                class as u8,
                if i < 240 { Split::Train } else { Split::Test },
            )
            .unwrap();
        }
        ds
    }

    #[test]
    fn policy_learns_separable_classes_deterministically() {
        let ds = separable_policy_data();
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
        };
        let (p1, r1) = train_policy(&ds, &tiny(), &tc, 9).unwrap();
        assert!(r1.best().test_accuracy.unwrap() > 0.9);
        let (p2, r2) = train_policy(&ds, &tiny(), &tc, 9).unwrap();
        assert_eq!(p1.to_bytes("c").unwrap(), p2.to_bytes("c").unwrap());
        assert_eq!(r1.epochs, r2.epochs);
    }

    #[test]
    fn goal_checker_beats_majority_baseline() {
        let d = 16;
        let w = 9 * d;
        let mut ds = Dataset::new(
            DatasetKind::Goal,
            w,
            Some(sha256_hex(b"e")),
            sha256_hex(b"c"),
        );
        let mut rng = rng_from_seed(6);
        for i in 0..400 {
            let positive = i % 2 == 0;
            let goal: Vec<f32> = (0..d).map(|_| rand::Rng::random::<f32>(&mut rng)).collect();
            let current: Vec<f32> = if positive {
                goal.iter()
                    .map(|v| v + 0.05 * rand::Rng::random::<f32>(&mut rng))
                    .collect()
            } else {
                (0..d).map(|_| rand::Rng::random::<f32>(&mut rng)).collect()
            };
            let mut rec = current;
            for _ in 0..8 {
                rec.extend_from_slice(&goal);
            }
            ds.push(
                &rec,
                positive as u8,
                if i < 320 { Split::Train } else { Split::Test },
            )
            .unwrap();
        }
        let tc = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
        };
        let (_, report) = train_goal_checker(&ds, &tiny(), &tc, 2).unwrap();
        assert!(
            report.best().test_accuracy.unwrap() > 0.5,
            "{:?}",
            report.best()
        );
    }

    #[test]
    fn rejects_wrong_dataset_kind() {
        let ds = separable_policy_data();
        let tc = TrainConfig::goal_checker();
        assert!(matches!(
            train_goal_checker(&ds, &tiny(), &tc, 0),
            Err(ModelError::Dataset(_))
        ));
    }
}
