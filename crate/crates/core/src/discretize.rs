//! Turns a waypoint path into {Forward, Right, Left} commands.
//!
//! A virtual pose starts at the first waypoint. Waypoints are visited in
//! order; for each, the pose turns in 10° steps until the look-ahead waypoint
//! is within the turn threshold, then steps forward 0.1 m at a time (turning
//! again whenever the offset grows past the threshold) until the current
//! waypoint is within the arrival threshold. A waypoint the pose can no longer
//! get closer to also counts as reached, so a heading biased by up to the
//! turn threshold cannot strand the pose beside the path.
//!
//! The look-ahead is counted in waypoints, so its metric reach scales with
//! the map resolution: 25 waypoints span 0.25 m at 1 cm cells but 1.25 m at
//! 5 cm cells, where a look-ahead that long cuts corners into walls. Use
//! about 0.2 m of reach (4 waypoints at 5 cm).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::Pose;
use crate::plan::WaypointPath;
use crate::util::wrap_degrees;

/// Degrees per Left/Right action.
pub const TURN_DEGREES: f64 = 10.0;
/// Meters per Forward action.
pub const FORWARD_METERS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    Right,
    Left,
    Done,
}

impl Action {
    /// Class index used by the policy network: Forward, Right, Left.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Action::Forward => Some(0),
            Action::Right => Some(1),
            Action::Left => Some(2),
            Action::Done => None,
        }
    }

    pub fn from_class_index(idx: usize) -> Option<Action> {
        match idx {
            0 => Some(Action::Forward),
            1 => Some(Action::Right),
            2 => Some(Action::Left),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Action::Forward => 'F',
            Action::Right => 'R',
            Action::Left => 'L',
            Action::Done => 'D',
        }
    }

    pub fn from_char(c: char) -> Option<Action> {
        match c {
            'F' => Some(Action::Forward),
            'R' => Some(Action::Right),
            'L' => Some(Action::Left),
            'D' => Some(Action::Done),
            _ => None,
        }
    }

    /// Applies the action's kinematics to a pose, ignoring collisions.
    pub fn apply(self, pose: &Pose) -> Pose {
        match self {
            Action::Forward => pose.advanced(FORWARD_METERS),
            Action::Left => pose.rotated(TURN_DEGREES),
            Action::Right => pose.rotated(-TURN_DEGREES),
            Action::Done => *pose,
        }
    }
}

pub fn actions_to_string(actions: &[Action]) -> String {
    actions.iter().map(|a| a.as_char()).collect()
}

pub fn actions_from_str(s: &str) -> Option<Vec<Action>> {
    s.chars().map(Action::from_char).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizeParams {
    pub lookahead_waypoints: usize,
    pub turn_threshold: f64,
    pub arrival_threshold: f64,
    /// Consecutive distance-increasing Forwards tolerated before giving up.
    pub divergence_limit: usize,
}

impl Default for DiscretizeParams {
    fn default() -> Self {
        Self {
            lookahead_waypoints: 25,
            turn_threshold: 20.0,
            arrival_threshold: 0.1,
            divergence_limit: 5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DiscretizeError {
    #[error("empty path")]
    EmptyPath,
    #[error("start heading {0} is not a multiple of 10 degrees")]
    BadHeading(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("virtual pose diverged from waypoint {waypoint} after {forwards} forward steps")]
    Divergence { waypoint: usize, forwards: usize },
}

pub fn discretize(
    path: &WaypointPath,
    start_heading: f64,
    params: &DiscretizeParams,
) -> Result<Vec<Action>, DiscretizeError> {
    if path.waypoints.is_empty() {
        return Err(DiscretizeError::EmptyPath);
    }
    if (start_heading / TURN_DEGREES).fract() != 0.0 {
        return Err(DiscretizeError::BadHeading(start_heading));
    }
    if params.turn_threshold < TURN_DEGREES {
        return Err(DiscretizeError::InvalidParams(format!(
            "turn threshold {} is below the turn increment",
            params.turn_threshold
        )));
    }
    if !(params.arrival_threshold > 0.0) {
        return Err(DiscretizeError::InvalidParams(
            "arrival threshold must be > 0".into(),
        ));
    }

    let wps = &path.waypoints;
    let last = wps.len() - 1;
    let (x0, y0) = wps[0];
    let mut pose = Pose::new(x0, y0, start_heading);
    let mut out = Vec::new();

    for i in 0..=last {
        let target = wps[(i + params.lookahead_waypoints).min(last)];
        align(&mut pose, target, params, &mut out);
        let mut prev = distance(&pose, wps[i]);
        let mut increases = 0;
        let mut forwards = 0;
        while distance(&pose, wps[i]) > params.arrival_threshold {
            align(&mut pose, target, params, &mut out);
            let next = Action::Forward.apply(&pose);
            if distance(&next, wps[i]) >= distance(&pose, wps[i]) {
                // Closest approach already reached.
                break;
            }
            pose = next;
            out.push(Action::Forward);
            forwards += 1;
            let d = distance(&pose, wps[i]);
            increases = if d > prev { increases + 1 } else { 0 };
            if increases >= params.divergence_limit {
                return Err(DiscretizeError::Divergence {
                    waypoint: i,
                    forwards,
                });
            }
            prev = d;
        }
    }
    Ok(out)
}

fn distance(pose: &Pose, p: (f64, f64)) -> f64 {
    (pose.x - p.0).hypot(pose.y - p.1)
}

/// Turns toward `target` until its bearing is within the turn threshold.
/// Targets inside the arrival radius have no meaningful bearing and are
/// ignored.
fn align(pose: &mut Pose, target: (f64, f64), params: &DiscretizeParams, out: &mut Vec<Action>) {
    if distance(pose, target) <= params.arrival_threshold {
        return;
    }
    let bearing = (target.1 - pose.y).atan2(target.0 - pose.x).to_degrees();
    loop {
        let offset = wrap_degrees(bearing - pose.heading);
        if offset.abs() <= params.turn_threshold {
            break;
        }
        let action = if offset > 0.0 {
            Action::Left
        } else {
            Action::Right
        };
        *pose = action.apply(pose);
        out.push(action);
    }
}

/// Kinematic replay of a command sequence from a pose, without collision
/// checks. Returns every intermediate pose including the start.
pub fn replay_kinematics(start: &Pose, actions: &[Action]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(actions.len() + 1);
    poses.push(*start);
    let mut pose = *start;
    for a in actions {
        pose = a.apply(&pose);
        poses.push(pose);
    }
    poses
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{
        generate_floorplan, is_collision_free, FloorplanParams, Footprint, GridMap,
    };
    use crate::plan::{build_costmap, shortest_path, CostmapParams};
    use crate::util::rng_from_seed;

    fn straight_path(cells: i64, res: f64) -> WaypointPath {
        let waypoints: Vec<_> = (0..=cells)
            .map(|i| ((i as f64 + 0.5) * res, 0.5 * res))
            .collect();
        WaypointPath {
            cells: (0..=cells).map(|i| (i, 0)).collect(),
            total_length: cells as f64 * res,
            cost: cells as f64 * res,
            waypoints,
        }
    }

    #[test]
    fn straight_meter_is_ten_forwards() {
        let path = straight_path(20, 0.05);
        let actions = discretize(&path, 0.0, &DiscretizeParams::default()).unwrap();
        assert_eq!(actions, vec![Action::Forward; 10]);
    }

    #[test]
    fn single_waypoint_is_empty() {
        let path = straight_path(0, 0.05);
        assert!(discretize(&path, 30.0, &DiscretizeParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        let path = straight_path(3, 0.05);
        assert_eq!(
            discretize(&path, 15.0, &DiscretizeParams::default()),
            Err(DiscretizeError::BadHeading(15.0))
        );
        let empty = WaypointPath {
            waypoints: vec![],
            cells: vec![],
            total_length: 0.0,
            cost: 0.0,
        };
        assert_eq!(
            discretize(&empty, 0.0, &DiscretizeParams::default()),
            Err(DiscretizeError::EmptyPath)
        );
        let params = DiscretizeParams {
            turn_threshold: 5.0,
            ..Default::default()
        };
        assert!(matches!(
            discretize(&path, 0.0, &params),
            Err(DiscretizeError::InvalidParams(_))
        ));
    }

    #[test]
    fn left_bend_starts_with_left_turns() {
        // 0.5 m east then 2 m north (+y is a left turn when heading east).
        let res = 0.05;
        let mut waypoints = vec![];
        let mut cells = vec![];
        for i in 0..=10 {
            cells.push((i, 0));
        }
        for j in 1..=40 {
            cells.push((10, j));
        }
        for &(x, y) in &cells {
            waypoints.push(((x as f64 + 0.5) * res, (y as f64 + 0.5) * res));
        }
        let total_length = (cells.len() - 1) as f64 * res;
        let path = WaypointPath {
            waypoints,
            cells,
            total_length,
            cost: total_length,
        };
        let actions = discretize(&path, 0.0, &DiscretizeParams::default()).unwrap();
        let lead = actions.iter().take_while(|a| **a == Action::Left).count();
        assert!(lead > 0);
        assert_eq!(actions[lead], Action::Forward);
        // Offset to the look-ahead waypoint after the leading turns.
        let target = path.waypoints[25];
        let bearing = (target.1 - path.waypoints[0].1)
            .atan2(target.0 - path.waypoints[0].0)
            .to_degrees();
        assert!(wrap_degrees(bearing - lead as f64 * 10.0).abs() <= 20.0);
        let start = Pose::new(path.waypoints[0].0, path.waypoints[0].1, 0.0);
        let end = *replay_kinematics(&start, &actions).last().unwrap();
        let goal = path.end();
        assert!((end.x - goal.0).hypot(end.y - goal.1) <= 0.2);
    }

    #[test]
    fn turn_ties_break_left() {
        let path = straight_path(30, 0.05);
        let actions = discretize(&path, 180.0, &DiscretizeParams::default()).unwrap();
        assert_eq!(
            actions.iter().take_while(|a| **a == Action::Left).count(),
            16
        );
    }

    #[test]
    fn char_codes_round_trip() {
        let s = "FRLDF";
        assert_eq!(actions_to_string(&actions_from_str(s).unwrap()), s);
        assert!(actions_from_str("FX").is_none());
    }

    #[test]
    fn random_plans_replay_faithfully() {
        let fp = Footprint::default();
        let params = DiscretizeParams {
            lookahead_waypoints: 4,
            ..Default::default()
        };
        let mut count = 0;
        for map_seed in 0..5u64 {
            let map: GridMap = generate_floorplan(map_seed, &FloorplanParams::default()).unwrap();
            let cm = build_costmap(&map, &fp, &CostmapParams::for_footprint(&fp)).unwrap();
            let mut rng = rng_from_seed(map_seed + 100);
            while count < (map_seed as usize + 1) * 40 {
                let s = crate::gridworld::sample_free_pose(&map, &fp, &mut rng, 10_000).unwrap();
                let g = crate::gridworld::sample_free_pose(&map, &fp, &mut rng, 10_000).unwrap();
                let Ok(path) = shortest_path(&cm, &s, &g) else {
                    continue;
                };
                let actions = discretize(&path, s.heading, &params).unwrap();
                let (sx, sy) = path.start();
                let poses = replay_kinematics(&Pose::new(sx, sy, s.heading), &actions);
                let end = poses.last().unwrap();
                let goal = path.end();
                assert!((end.x - goal.0).hypot(end.y - goal.1) <= 0.3);
                for p in &poses {
                    let c = cm.cell_of(p.x, p.y);
                    assert!(!cm.is_lethal(c.0, c.1));
                    assert!(is_collision_free(&map, p, &fp));
                }
                let s = actions_to_string(&actions);
                assert!(!s.contains("LR") && !s.contains("RL"), "{s}");
                let trailing = s.chars().rev().take_while(|c| *c != 'F').count();
                assert!(trailing <= 18);
                let bound =
                    2.0 * path.total_length / FORWARD_METERS + 36.0 * path.waypoints.len() as f64;
                assert!((actions.len() as f64) <= bound);
                count += 1;
            }
        }
    }
}
