//! Dataset generators. Each sample or trajectory draws from its own seeded
//! stream, so parallel generation is reproducible.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetKind, Split};
use super::goal::GoalCheckInput;
use super::policy::PolicyInput;
use super::{Autoencoder, Embedding, ModelError};
use crate::discretize::{discretize, Action, DiscretizeParams};
use crate::gridworld::{
    is_collision_free, sample_free_pose, Footprint, GridMap, Pose, DEFAULT_SAMPLE_ATTEMPTS,
};
use crate::pipeline::HistoryBuffer;
use crate::plan::{shortest_path, Costmap, WaypointPath};
use crate::render::{capture_panorama, render, CameraParams};
use crate::sim::{execute_commands, execute_poses, Trajectory};
use crate::util::{child_seed, rng_from_seed, Rng};

/// Positive goal pairs lie within this distance of the panorama position.
pub const GOAL_POSITIVE_RADIUS: f64 = 0.1;
/// Negative goal pairs lie at least this far away.
pub const GOAL_NEGATIVE_MIN_DISTANCE: f64 = 1.0;
const AE_TRAIN_FRACTION: f64 = 0.9;
const POLICY_TRAIN_FRACTION: f64 = 0.8;
const GOAL_TRAIN_FRACTION: f64 = 0.9;
const MAX_RETRIES: usize = 200;

const STREAM_AE: u64 = 0xAE;
const STREAM_POLICY: u64 = 0x9011C7;
const STREAM_GOAL: u64 = 0x60A1;
const STREAM_SPLIT: u64 = 0x5917;

/// Moves a pose to the centre of its cell, or `None` when that cell is
/// lethal or the centred pose collides.
pub fn snap_to_free_cell(map: &GridMap, fp: &Footprint, cm: &Costmap, pose: &Pose) -> Option<Pose> {
    let (cx, cy) = cm.cell_of(pose.x, pose.y);
    if cm.is_lethal(cx, cy) {
        return None;
    }
    let (x, y) = cm.center_of(cx, cy);
    let snapped = Pose::new(x, y, pose.heading);
    is_collision_free(map, &snapped, fp).then_some(snapped)
}

#[derive(Debug, Clone)]
pub struct ExpertPlan {
    pub path: WaypointPath,
    pub actions: Vec<Action>,
}

/// Plans on the costmap, discretizes and checks the commands in the
/// simulator. `start` must already sit on a cell centre.
pub fn expert_commands(
    map: &GridMap,
    fp: &Footprint,
    cm: &Costmap,
    start: &Pose,
    goal: &Pose,
    params: &DiscretizeParams,
) -> Result<ExpertPlan, ModelError> {
    let path = shortest_path(cm, start, goal)?;
    let actions = discretize(&path, start.heading, params)?;
    let (sx, sy) = path.start();
    execute_poses(map, fp, &Pose::new(sx, sy, start.heading), &actions)?;
    Ok(ExpertPlan { path, actions })
}

/// Samples a start/goal pair (snapped to free cell centres, at least
/// `min_separation` apart) with a valid expert plan.
pub(crate) fn sample_expert_pair(
    map: &GridMap,
    fp: &Footprint,
    cm: &Costmap,
    params: &DiscretizeParams,
    min_separation: f64,
    rng: &mut Rng,
) -> Result<(Pose, Pose, ExpertPlan), ModelError> {
    for _ in 0..MAX_RETRIES {
        let s = sample_free_pose(map, fp, rng, DEFAULT_SAMPLE_ATTEMPTS)?;
        let g = sample_free_pose(map, fp, rng, DEFAULT_SAMPLE_ATTEMPTS)?;
        let (Some(s), Some(g)) = (
            snap_to_free_cell(map, fp, cm, &s),
            snap_to_free_cell(map, fp, cm, &g),
        ) else {
            continue;
        };
        if s.distance_to(&g) < min_separation {
            continue;
        }
        if let Ok(plan) = expert_commands(map, fp, cm, &s, &g, params) {
            if !plan.actions.is_empty() {
                return Ok((s, g, plan));
            }
        }
    }
    Err(ModelError::RetriesExhausted(MAX_RETRIES))
}

/// Split labels for `n` items: a seeded shuffle puts `round(n * frac)` in train.
fn split_assignment(n: usize, frac: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(child_seed(seed, STREAM_SPLIT, 0)));
    let n_train = (n as f64 * frac).round() as usize;
    let mut out = vec![Split::Test; n];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    out
}

/// Images rendered at uniformly sampled collision-free poses (CHW records).
pub fn gen_autoencoder_dataset(
    map: &GridMap,
    fp: &Footprint,
    cam: &CameraParams,
    count: usize,
    config_hash: &str,
    seed: u64,
) -> Result<Dataset, ModelError> {
    if count < 10 {
        return Err(ModelError::Config(format!(
            "autoencoder dataset needs at least 10 images, got {count}"
        )));
    }
    cam.validate()?;
    let mut rng = rng_from_seed(child_seed(seed, STREAM_AE, 0));
    let poses = (0..count)
        .map(|_| sample_free_pose(map, fp, &mut rng, DEFAULT_SAMPLE_ATTEMPTS))
        .collect::<Result<Vec<_>, _>>()?;
    let images: Vec<Vec<f32>> = poses
        .par_iter()
        .map(|p| render(map, p, cam).to_chw())
        .collect();
    let splits = split_assignment(count, AE_TRAIN_FRACTION, seed);
    let mut ds = Dataset::new(
        DatasetKind::Autoencoder,
        cam.values_per_image(),
        None,
        config_hash.into(),
    );
    for (img, split) in images.iter().zip(splits) {
        ds.push(img, 0, split)?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEndpoints {
    pub start: (f64, f64),
    pub goal: (f64, f64),
}

pub struct PolicyDataset {
    pub dataset: Dataset,
    pub endpoints: Vec<TrajectoryEndpoints>,
    /// Number of examples contributed by each trajectory, in order.
    pub trajectory_lengths: Vec<usize>,
}

struct TrajectoryExamples {
    endpoints: TrajectoryEndpoints,
    inputs: Vec<PolicyInput>,
    labels: Vec<u8>,
}

/// Embeds every observation of a recorded trajectory and pairs each step's
/// policy input with the action taken there.
fn trajectory_examples(
    map: &GridMap,
    cam: &CameraParams,
    encoder: &Autoencoder,
    traj: &Trajectory,
) -> Result<(Vec<PolicyInput>, Vec<u8>), ModelError> {
    let end = traj.poses.last().expect("trajectory has a start pose");
    let mut images = traj.observations.clone();
    images.extend(capture_panorama(map, end, cam).images);
    let mut emb = encoder.encode_batch(&images)?;
    let goal: Vec<Embedding> = emb.split_off(traj.observations.len());
    let mut history = HistoryBuffer::new(emb[0].clone());
    let mut inputs = Vec::with_capacity(traj.actions.len());
    let mut labels = Vec::with_capacity(traj.actions.len());
    for (k, action) in traj.actions.iter().enumerate() {
        if k > 0 {
            history.push(emb[k].clone());
        }
        inputs.push(PolicyInput::assemble(&history, &goal)?);
        labels.push(action.class_index().expect("expert actions are motions") as u8);
    }
    Ok((inputs, labels))
}

/// Expert trajectories replayed in the simulator; one example per action.
/// Splits are by whole trajectory.
#[allow(clippy::too_many_arguments)]
pub fn gen_policy_dataset(
    map: &GridMap,
    fp: &Footprint,
    cm: &Costmap,
    cam: &CameraParams,
    encoder: &Autoencoder,
    encoder_hash: &str,
    n_trajectories: usize,
    params: &DiscretizeParams,
    min_separation: f64,
    config_hash: &str,
    seed: u64,
) -> Result<PolicyDataset, ModelError> {
    if n_trajectories == 0 {
        return Err(ModelError::Config("need at least one trajectory".into()));
    }
    let per_traj: Vec<TrajectoryExamples> = (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(child_seed(seed, STREAM_POLICY, i as u64));
            let (s, g, plan) = sample_expert_pair(map, fp, cm, params, min_separation, &mut rng)?;
            let traj = execute_commands(map, fp, &s, &plan.actions, cam)?;
            let (inputs, labels) = trajectory_examples(map, cam, encoder, &traj)?;
            Ok(TrajectoryExamples {
                endpoints: TrajectoryEndpoints {
                    start: (s.x, s.y),
                    goal: (g.x, g.y),
                },
                inputs,
                labels,
            })
        })
        .collect::<Result<_, ModelError>>()?;

    let splits = split_assignment(n_trajectories, POLICY_TRAIN_FRACTION, seed);
    let width = per_traj[0].inputs[0].values().len();
    let mut ds = Dataset::new(
        DatasetKind::Policy,
        width,
        Some(encoder_hash.into()),
        config_hash.into(),
    );
    let mut endpoints = Vec::with_capacity(n_trajectories);
    let mut lengths = Vec::with_capacity(n_trajectories);
    for (t, split) in per_traj.into_iter().zip(splits) {
        for (x, &label) in t.inputs.iter().zip(&t.labels) {
            ds.push(x.values(), label, split)?;
        }
        lengths.push(t.labels.len());
        endpoints.push(t.endpoints);
    }
    Ok(PolicyDataset {
        dataset: ds,
        endpoints,
        trajectory_lengths: lengths,
    })
}

/// Uniform point in a disc of radius `r` around `(x, y)`.
fn sample_in_disc(rng: &mut Rng, x: f64, y: f64, r: f64) -> (f64, f64) {
    let rho = r * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    (x + rho * theta.cos(), y + rho * theta.sin())
}

/// Builds one goal-check pair: positives lie within the positive radius of
/// the panorama position, negatives at least the negative distance away.
fn goal_pair(
    map: &GridMap,
    fp: &Footprint,
    positive: bool,
    rng: &mut Rng,
) -> Result<(Pose, Pose), ModelError> {
    let goal = sample_free_pose(map, fp, rng, DEFAULT_SAMPLE_ATTEMPTS)?;
    for _ in 0..MAX_RETRIES {
        let current = if positive {
            let (x, y) = sample_in_disc(rng, goal.x, goal.y, GOAL_POSITIVE_RADIUS);
            Pose::new(x, y, rng.random::<f64>() * 360.0)
        } else {
            let p = sample_free_pose(map, fp, rng, DEFAULT_SAMPLE_ATTEMPTS)?;
            if p.distance_to(&goal) < GOAL_NEGATIVE_MIN_DISTANCE {
                continue;
            }
            p
        };
        if is_collision_free(map, &current, fp) {
            return Ok((goal, current));
        }
    }
    Err(ModelError::RetriesExhausted(MAX_RETRIES))
}

/// Balanced goal-check pairs; even indices are positives.
#[allow(clippy::too_many_arguments)]
pub fn gen_goal_dataset(
    map: &GridMap,
    fp: &Footprint,
    cam: &CameraParams,
    encoder: &Autoencoder,
    encoder_hash: &str,
    count: usize,
    config_hash: &str,
    seed: u64,
) -> Result<Dataset, ModelError> {
    if count < 2 || count % 2 != 0 {
        return Err(ModelError::Config(format!(
            "goal dataset size must be even and >= 2, got {count}"
        )));
    }
    let records: Vec<(Vec<f32>, u8)> = (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_from_seed(child_seed(seed, STREAM_GOAL, j as u64));
            let positive = j % 2 == 0;
            let (goal, current) = goal_pair(map, fp, positive, &mut rng)?;
            let mut images = capture_panorama(map, &goal, cam).images;
            images.push(render(map, &current, cam));
            let mut emb = encoder.encode_batch(&images)?;
            let current = emb.pop().expect("nine embeddings");
            Ok((
                GoalCheckInput { current, goal: emb }.to_record(),
                positive as u8,
            ))
        })
        .collect::<Result<_, ModelError>>()?;
    let splits = split_assignment(count, GOAL_TRAIN_FRACTION, seed);
    let mut ds = Dataset::new(
        DatasetKind::Goal,
        records[0].0.len(),
        Some(encoder_hash.into()),
        config_hash.into(),
    );
    for ((rec, label), split) in records.iter().zip(splits) {
        ds.push(rec, *label, split)?;
    }
    Ok(ds)
}

/// Positions of a goal dataset's pairs, regenerated from the seed; used by
/// tests to check the sampling radii without storing poses in the dataset.
#[cfg(test)]
pub(crate) fn goal_pair_poses(
    map: &GridMap,
    fp: &Footprint,
    count: usize,
    seed: u64,
) -> Result<Vec<(Pose, Pose, bool)>, ModelError> {
    (0..count)
        .map(|j| {
            let mut rng = rng_from_seed(child_seed(seed, STREAM_GOAL, j as u64));
            let positive = j % 2 == 0;
            goal_pair(map, fp, positive, &mut rng).map(|(g, c)| (g, c, positive))
        })
        .collect()
}
