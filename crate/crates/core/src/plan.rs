//! Expert planner: inflated costmaps and 8-connected Dijkstra.
//!
//! Expert trajectories are planned on an inflated costmap so they keep away
//! from walls. Optimal lengths for SPL use the same lethal region with a
//! uniform cost of 1, so they measure pure geometric length.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{obstacle_distance_field, Footprint, GridMap, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no path between the endpoints")]
    NoPath,
    #[error("{0} endpoint lies in a lethal cell")]
    LethalEndpoint(&'static str),
    #[error("invalid planner parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellCost {
    Lethal,
    Finite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostmapParams {
    /// Meters; must be at least the footprint radius.
    pub inflation_radius: f64,
    pub inflation_gain: f64,
}

impl CostmapParams {
    pub fn for_footprint(fp: &Footprint) -> Self {
        Self {
            inflation_radius: 3.0 * fp.radius,
            inflation_gain: 4.0,
        }
    }
}

impl Default for CostmapParams {
    fn default() -> Self {
        Self::for_footprint(&Footprint::default())
    }
}

#[derive(Debug, Clone)]
pub struct Costmap {
    width: usize,
    height: usize,
    resolution: f64,
    /// Traversal cost per cell; `f64::INFINITY` marks lethal cells.
    costs: Vec<f64>,
}

impl Costmap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn in_bounds(&self, cx: i64, cy: i64) -> bool {
        cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height
    }

    pub fn cost(&self, cx: i64, cy: i64) -> CellCost {
        if !self.in_bounds(cx, cy) {
            return CellCost::Lethal;
        }
        let c = self.costs[cy as usize * self.width + cx as usize];
        if c.is_finite() {
            CellCost::Finite(c)
        } else {
            CellCost::Lethal
        }
    }

    pub fn is_lethal(&self, cx: i64, cy: i64) -> bool {
        self.cost(cx, cy) == CellCost::Lethal
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.resolution).floor() as i64,
            (y / self.resolution).floor() as i64,
        )
    }

    pub fn center_of(&self, cx: i64, cy: i64) -> (f64, f64) {
        (
            (cx as f64 + 0.5) * self.resolution,
            (cy as f64 + 0.5) * self.resolution,
        )
    }

    fn raw(&self, idx: usize) -> f64 {
        self.costs[idx]
    }
}

/// Lethal within the footprint radius of any obstacle, then a linear ramp
/// from `1 + gain` down to exactly 1.0 at the inflation radius.
pub fn build_costmap(
    map: &GridMap,
    fp: &Footprint,
    params: &CostmapParams,
) -> Result<Costmap, PlanError> {
    if !(params.inflation_radius >= fp.radius) {
        return Err(PlanError::InvalidParam(format!(
            "inflation radius {} is below the footprint radius {}",
            params.inflation_radius, fp.radius
        )));
    }
    if !(params.inflation_gain >= 0.0) {
        return Err(PlanError::InvalidParam(
            "inflation gain must be >= 0".into(),
        ));
    }
    let field = obstacle_distance_field(map, params.inflation_radius + map.resolution());
    let costs = field
        .iter()
        .map(|&d| {
            if d <= fp.radius {
                f64::INFINITY
            } else if d <= params.inflation_radius {
                1.0 + params.inflation_gain * (1.0 - d / params.inflation_radius)
            } else {
                1.0
            }
        })
        .collect();
    Ok(Costmap {
        width: map.width(),
        height: map.height(),
        resolution: map.resolution(),
        costs,
    })
}

/// Costmap with the footprint's lethal region and uniform cost elsewhere.
pub fn uniform_costmap(map: &GridMap, fp: &Footprint) -> Costmap {
    build_costmap(
        map,
        fp,
        &CostmapParams {
            inflation_radius: fp.radius,
            inflation_gain: 0.0,
        },
    )
    .expect("uniform costmap parameters are always valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    /// Cell centers in meters.
    pub waypoints: Vec<(f64, f64)>,
    pub cells: Vec<(i64, i64)>,
    pub total_length: f64,
    /// Accumulated traversal cost (step length times destination cost).
    pub cost: f64,
}

impl WaypointPath {
    pub fn start(&self) -> (f64, f64) {
        self.waypoints[0]
    }

    pub fn end(&self) -> (f64, f64) {
        *self.waypoints.last().expect("paths are never empty")
    }
}

/// Expansion order E, NE, N, NW, W, SW, S, SE with N = -y (up in map files).
pub const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Whether the move from `(cx, cy)` by `(dx, dy)` is allowed: target in
/// bounds and non-lethal, and diagonals not squeezing between two lethal cells.
pub fn move_allowed(cm: &Costmap, cx: i64, cy: i64, dx: i64, dy: i64) -> bool {
    let (nx, ny) = (cx + dx, cy + dy);
    if cm.is_lethal(nx, ny) {
        return false;
    }
    !(dx != 0 && dy != 0 && cm.is_lethal(cx + dx, cy) && cm.is_lethal(cx, cy + dy))
}

pub fn step_length(cm: &Costmap, dx: i64, dy: i64) -> f64 {
    if dx != 0 && dy != 0 {
        cm.resolution * std::f64::consts::SQRT_2
    } else {
        cm.resolution
    }
}

#[derive(Debug, PartialEq)]
struct QueueEntry {
    cost: f64,
    seq: u64,
    idx: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then FIFO on insertion order.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost 8-connected path between the cells containing the two poses.
pub fn shortest_path(cm: &Costmap, start: &Pose, goal: &Pose) -> Result<WaypointPath, PlanError> {
    let s = cm.cell_of(start.x, start.y);
    let g = cm.cell_of(goal.x, goal.y);
    shortest_path_cells(cm, s, g)
}

pub fn shortest_path_cells(
    cm: &Costmap,
    start: (i64, i64),
    goal: (i64, i64),
) -> Result<WaypointPath, PlanError> {
    if cm.is_lethal(start.0, start.1) {
        return Err(PlanError::LethalEndpoint("start"));
    }
    if cm.is_lethal(goal.0, goal.1) {
        return Err(PlanError::LethalEndpoint("goal"));
    }
    let w = cm.width;
    let n = cm.width * cm.height;
    let to_idx = |(x, y): (i64, i64)| y as usize * w + x as usize;
    let (si, gi) = (to_idx(start), to_idx(goal));
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    dist[si] = 0.0;
    heap.push(QueueEntry {
        cost: 0.0,
        seq,
        idx: si,
    });
    while let Some(QueueEntry { cost, idx, .. }) = heap.pop() {
        if done[idx] {
            continue;
        }
        done[idx] = true;
        if idx == gi {
            break;
        }
        let (cx, cy) = ((idx % w) as i64, (idx / w) as i64);
        for (dx, dy) in NEIGHBORS {
            if !move_allowed(cm, cx, cy, dx, dy) {
                continue;
            }
            let ni = to_idx((cx + dx, cy + dy));
            if done[ni] {
                continue;
            }
            let nc = cost + step_length(cm, dx, dy) * cm.raw(ni);
            if nc < dist[ni] {
                dist[ni] = nc;
                parent[ni] = idx;
                seq += 1;
                heap.push(QueueEntry {
                    cost: nc,
                    seq,
                    idx: ni,
                });
            }
        }
    }
    if !dist[gi].is_finite() {
        return Err(PlanError::NoPath);
    }
    let mut cells = vec![goal];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push(((cur % w) as i64, (cur / w) as i64));
    }
    cells.reverse();
    let waypoints: Vec<(f64, f64)> = cells.iter().map(|&(x, y)| cm.center_of(x, y)).collect();
    let total_length = waypoints
        .windows(2)
        .map(|p| (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1))
        .sum();
    Ok(WaypointPath {
        waypoints,
        cells,
        total_length,
        cost: dist[gi],
    })
}

/// Geometric length of the shortest path through footprint-eroded free space.
pub fn optimal_length(
    map: &GridMap,
    fp: &Footprint,
    start: &Pose,
    goal: &Pose,
) -> Result<f64, PlanError> {
    optimal_length_on(&uniform_costmap(map, fp), start, goal)
}

/// As [`optimal_length`] but reusing a prebuilt [`uniform_costmap`].
pub fn optimal_length_on(uniform: &Costmap, start: &Pose, goal: &Pose) -> Result<f64, PlanError> {
    shortest_path(uniform, start, goal).map(|p| p.cost)
}
