//! The environment transition: applies actions to the agent with collision
//! physics, renders observations, and records trajectories.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{Action, FORWARD_METERS};
use crate::gridworld::{is_collision_free, Footprint, GridMap, Pose};
use crate::render::{render, CameraParams, RgbdImage};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    /// Terminal: the agent hit an obstacle moving forward.
    #[error("collision at step {step} moving forward from ({x:.3}, {y:.3})")]
    Collision { step: usize, x: f64, y: f64 },
    #[error("agent already collided; no further transitions accepted")]
    AlreadyCollided,
    #[error("Done is not a motion action")]
    DoneNotSteppable,
    #[error("start pose is not collision-free")]
    InvalidStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pose: Pose,
    pub collided: bool,
}

impl AgentState {
    pub fn new(pose: Pose) -> Self {
        Self {
            pose,
            collided: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: AgentState,
    pub observation: RgbdImage,
}

/// Checks the straight forward sweep from `from` to `to`, sampling at no more
/// than half a cell, destination included.
pub fn sweep_is_free(map: &GridMap, fp: &Footprint, from: &Pose, to: &Pose) -> bool {
    let len = from.distance_to(to);
    let n = ((len / (map.resolution() / 2.0)).ceil() as usize).max(1);
    (1..=n).all(|k| {
        let t = k as f64 / n as f64;
        let p = Pose::new(
            from.x + t * (to.x - from.x),
            from.y + t * (to.y - from.y),
            to.heading,
        );
        is_collision_free(map, &p, fp)
    })
}

/// State transition without rendering. On a blocked Forward the returned
/// error is terminal; callers mark the state collided.
pub fn transition(
    map: &GridMap,
    fp: &Footprint,
    state: &AgentState,
    action: Action,
) -> Result<AgentState, SimError> {
    if state.collided {
        return Err(SimError::AlreadyCollided);
    }
    match action {
        Action::Done => Err(SimError::DoneNotSteppable),
        Action::Left | Action::Right => Ok(AgentState {
            pose: action.apply(&state.pose),
            collided: false,
        }),
        Action::Forward => {
            let next = action.apply(&state.pose);
            if sweep_is_free(map, fp, &state.pose, &next) {
                Ok(AgentState {
                    pose: next,
                    collided: false,
                })
            } else {
                Err(SimError::Collision {
                    step: 0,
                    x: state.pose.x,
                    y: state.pose.y,
                })
            }
        }
    }
}

/// One environment step: motion followed by an observation at the new pose.
/// A collision sets `state.collided`, so the same state rejects later steps.
pub fn step(
    map: &GridMap,
    fp: &Footprint,
    state: &mut AgentState,
    action: Action,
    cam: &CameraParams,
) -> Result<StepOutcome, SimError> {
    match transition(map, fp, state, action) {
        Ok(next) => {
            *state = next;
            Ok(StepOutcome {
                state: next,
                observation: render(map, &next.pose, cam),
            })
        }
        Err(e @ SimError::Collision { .. }) => {
            state.collided = true;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

/// Poses and observations recorded along an executed command sequence.
/// `poses[k]`/`observations[k]` are the state after `k` actions.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub observations: Vec<RgbdImage>,
    pub actions: Vec<Action>,
    /// 0.1 m per successful Forward.
    pub path_length: f64,
}

impl Trajectory {
    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.poses
            .iter()
            .enumerate()
            .map(|(k, p)| {
                TraceRecord::new(
                    k,
                    p,
                    if k == 0 {
                        None
                    } else {
                        Some(self.actions[k - 1])
                    },
                )
            })
            .collect()
    }
}

pub fn execute_commands(
    map: &GridMap,
    fp: &Footprint,
    start: &Pose,
    actions: &[Action],
    cam: &CameraParams,
) -> Result<Trajectory, SimError> {
    run_commands(map, fp, start, actions, Some(cam))
}

/// As [`execute_commands`] without rendering; `observations` stays empty.
pub fn execute_poses(
    map: &GridMap,
    fp: &Footprint,
    start: &Pose,
    actions: &[Action],
) -> Result<Trajectory, SimError> {
    run_commands(map, fp, start, actions, None)
}

fn run_commands(
    map: &GridMap,
    fp: &Footprint,
    start: &Pose,
    actions: &[Action],
    cam: Option<&CameraParams>,
) -> Result<Trajectory, SimError> {
    if !is_collision_free(map, start, fp) {
        return Err(SimError::InvalidStart);
    }
    let mut state = AgentState::new(*start);
    let mut poses = vec![*start];
    let mut observations = Vec::new();
    if let Some(cam) = cam {
        observations.push(render(map, start, cam));
    }
    let mut forwards = 0usize;
    for (k, &action) in actions.iter().enumerate() {
        let next = transition(map, fp, &state, action).map_err(|e| match e {
            SimError::Collision { x, y, .. } => SimError::Collision { step: k, x, y },
            other => other,
        })?;
        state = next;
        if action == Action::Forward {
            forwards += 1;
        }
        poses.push(state.pose);
        if let Some(cam) = cam {
            observations.push(render(map, &state.pose, cam));
        }
    }
    Ok(Trajectory {
        poses,
        observations,
        actions: actions.to_vec(),
        path_length: forwards as f64 * FORWARD_METERS,
    })
}

/// One line of a trajectory or episode trace (JSON-lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Action that produced this pose as a single character; absent at step 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_y: Option<f64>,
}

impl TraceRecord {
    pub fn new(step: usize, pose: &Pose, action: Option<Action>) -> Self {
        Self {
            step,
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            action: action.map(Action::as_char),
            belief: None,
            goal_x: None,
            goal_y: None,
        }
    }
}

pub fn write_trace(records: &[TraceRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(input: impl BufRead) -> std::io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
