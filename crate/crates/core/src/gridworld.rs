//! Occupancy-grid world: maps, poses, the disc footprint, collision checks,
//! free-pose sampling, procedural floorplans and the `navmap v1` text format.
//!
//! Cell `(cx, cy)` covers `[cx*res, (cx+1)*res) x [cy*res, (cy+1)*res)` in
//! metric coordinates. Row `cy = 0` is the first body line of a map file.
//! Headings are degrees counter-clockwise from the +x axis.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{child_seed, mix64, normalize_heading, rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("map format error: {0}")]
    Format(String),
    #[error("floorplan generation failed: {0}")]
    Generation(String),
    #[error("no collision-free pose found after {0} attempts")]
    SamplingExhausted(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
}

/// Side length (meters) of the square patches that share one wall color.
const COLOR_PATCH_METERS: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    seed: u64,
    cells: Vec<Cell>,
}

impl GridMap {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        seed: u64,
        cells: Vec<Cell>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::InvalidParam(
                "map dimensions must be positive".into(),
            ));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(GridError::InvalidParam(format!(
                "resolution must be > 0, got {resolution}"
            )));
        }
        if cells.len() != width * height {
            return Err(GridError::InvalidParam(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            seed,
            cells,
        })
    }

    /// All-free map of the given size.
    pub fn empty(
        width: usize,
        height: usize,
        resolution: f64,
        seed: u64,
    ) -> Result<Self, GridError> {
        Self::new(
            width,
            height,
            resolution,
            seed,
            vec![Cell::Free; width * height],
        )
    }

    /// Free interior surrounded by a one-cell Occupied border.
    pub fn walled(
        width: usize,
        height: usize,
        resolution: f64,
        seed: u64,
    ) -> Result<Self, GridError> {
        let mut map = Self::empty(width, height, resolution, seed)?;
        for cx in 0..width {
            map.set(cx, 0, Cell::Occupied);
            map.set(cx, height - 1, Cell::Occupied);
        }
        for cy in 0..height {
            map.set(0, cy, Cell::Occupied);
            map.set(width - 1, cy, Cell::Occupied);
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn extent_x(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn extent_y(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn in_bounds(&self, cx: i64, cy: i64) -> bool {
        cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height
    }

    pub fn index(&self, cx: usize, cy: usize) -> usize {
        cy * self.width + cx
    }

    /// Cell state; out-of-bounds reads as Occupied.
    pub fn cell(&self, cx: i64, cy: i64) -> Cell {
        if self.in_bounds(cx, cy) {
            self.cells[self.index(cx as usize, cy as usize)]
        } else {
            Cell::Occupied
        }
    }

    pub fn is_occupied(&self, cx: i64, cy: i64) -> bool {
        self.cell(cx, cy) == Cell::Occupied
    }

    pub fn set(&mut self, cx: usize, cy: usize, cell: Cell) {
        let idx = self.index(cx, cy);
        self.cells[idx] = cell;
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, cell: Cell) {
        for cy in y0..y1.min(self.height) {
            for cx in x0..x1.min(self.width) {
                self.set(cx, cy, cell);
            }
        }
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

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Free).count()
    }

    /// Deterministic wall color for a cell, a function of its coordinates and
    /// the map seed only. Neighbouring cells within one patch share a color.
    pub fn cell_color(&self, cx: i64, cy: i64) -> [f32; 3] {
        let patch = ((COLOR_PATCH_METERS / self.resolution).round() as i64).max(1);
        let px = cx.div_euclid(patch);
        let py = cy.div_euclid(patch);
        let h = mix64(self.seed ^ mix64((px as u64).wrapping_mul(0x1F1F_1F1F) ^ mix64(py as u64)));
        let hue = (h % 360) as f32;
        let sat = 0.65 + 0.35 * (((h >> 16) % 1000) as f32 / 1000.0);
        let val = 0.55 + 0.45 * (((h >> 32) % 1000) as f32 / 1000.0);
        hsv_to_rgb(hue, sat, val)
    }

    /// Serializes to the canonical `navmap v1` text form.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height + 64);
        let _ = writeln!(
            out,
            "navmap v1 {} {} {} {}",
            self.width, self.height, self.resolution, self.seed
        );
        for cy in 0..self.height {
            for cx in 0..self.width {
                out.push(match self.cells[self.index(cx, cy)] {
                    Cell::Free => '.',
                    Cell::Occupied => '#',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| GridError::Format("empty file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "navmap" || parts[1] != "v1" {
            return Err(GridError::Format(format!("bad header line: {header:?}")));
        }
        let width: usize = parts[2]
            .parse()
            .map_err(|_| GridError::Format(format!("bad width {:?}", parts[2])))?;
        let height: usize = parts[3]
            .parse()
            .map_err(|_| GridError::Format(format!("bad height {:?}", parts[3])))?;
        let resolution: f64 = parts[4]
            .parse()
            .map_err(|_| GridError::Format(format!("bad resolution {:?}", parts[4])))?;
        let seed: u64 = parts[5]
            .parse()
            .map_err(|_| GridError::Format(format!("bad seed {:?}", parts[5])))?;
        if width == 0 || height == 0 {
            return Err(GridError::Format("dimensions must be positive".into()));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(GridError::Format(format!(
                "resolution must be > 0, got {resolution}"
            )));
        }
        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0;
        for line in lines {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() && rows == height {
                continue;
            }
            if line.chars().count() != width {
                return Err(GridError::Format(format!(
                    "row {rows} has {} characters, expected {width}",
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Occupied,
                    other => {
                        return Err(GridError::Format(format!(
                            "invalid cell character {other:?}"
                        )))
                    }
                });
            }
            rows += 1;
        }
        if cells.len() != width * height {
            return Err(GridError::Format(format!(
                "body has {} cells, header declares {}x{}",
                cells.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            seed,
            cells,
        })
    }
}

fn hsv_to_rgb(hue: f32, sat: f32, val: f32) -> [f32; 3] {
    let c = val * sat;
    let hp = hue / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

pub fn load_map(path: impl AsRef<Path>) -> Result<GridMap, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    GridMap::parse(&text)
}

pub fn save_map(map: &GridMap, path: impl AsRef<Path>) -> Result<(), GridError> {
    let path = path.as_ref();
    std::fs::write(path, map.to_canonical_string()).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Planar agent pose. Position in meters, heading in degrees, kept in [0, 360).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn rotated(&self, degrees: f64) -> Self {
        Self::new(self.x, self.y, self.heading + degrees)
    }

    pub fn advanced(&self, distance: f64) -> Self {
        let rad = self.heading.to_radians();
        Self {
            x: self.x + distance * rad.cos(),
            y: self.y + distance * rad.sin(),
            heading: self.heading,
        }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Disc-shaped agent footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub radius: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self { radius: 0.18 }
    }
}

impl Footprint {
    pub fn new(radius: f64) -> Result<Self, GridError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(GridError::InvalidParam(format!(
                "footprint radius must be > 0, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn validate_for(&self, map: &GridMap) -> Result<(), GridError> {
        let min_extent = map.extent_x().min(map.extent_y());
        if self.radius >= min_extent / 2.0 {
            return Err(GridError::InvalidParam(format!(
                "footprint radius {} must be below half the smallest map extent ({})",
                self.radius,
                min_extent / 2.0
            )));
        }
        Ok(())
    }
}

/// Squared distance from `(px, py)` to the closed square of cell `(cx, cy)`.
fn dist2_point_to_cell(map: &GridMap, px: f64, py: f64, cx: i64, cy: i64) -> f64 {
    let (ccx, ccy) = map.center_of(cx, cy);
    let half = map.resolution / 2.0;
    let dx = ((px - ccx).abs() - half).max(0.0);
    let dy = ((py - ccy).abs() - half).max(0.0);
    dx * dx + dy * dy
}

/// True iff every cell touching the footprint disc at the pose is in-bounds
/// and Free. The heading is ignored.
pub fn is_collision_free(map: &GridMap, pose: &Pose, fp: &Footprint) -> bool {
    if !pose.x.is_finite() || !pose.y.is_finite() {
        return false;
    }
    let r = fp.radius;
    let (x0, y0) = map.cell_of(pose.x - r, pose.y - r);
    let (x1, y1) = map.cell_of(pose.x + r, pose.y + r);
    let r2 = r * r;
    for cy in y0..=y1 {
        for cx in x0..=x1 {
            if dist2_point_to_cell(map, pose.x, pose.y, cx, cy) <= r2 && map.is_occupied(cx, cy) {
                return false;
            }
        }
    }
    true
}

/// Per-cell distance (meters) from the cell center to the nearest Occupied
/// cell square, out-of-bounds counting as Occupied. Values are capped at
/// `cap`; Occupied cells read 0.
pub fn obstacle_distance_field(map: &GridMap, cap: f64) -> Vec<f64> {
    let (w, h) = (map.width as i64, map.height as i64);
    let res = map.resolution;
    let mut field = vec![cap; map.width * map.height];
    for cy in 0..h {
        for cx in 0..w {
            let idx = map.index(cx as usize, cy as usize);
            if map.is_occupied(cx, cy) {
                field[idx] = 0.0;
                continue;
            }
            let edge = (cx.min(w - 1 - cx).min(cy).min(h - 1 - cy) as f64 + 0.5) * res;
            field[idx] = field[idx].min(edge);
        }
    }
    let reach = (cap / res).ceil() as i64 + 1;
    for oy in 0..h {
        for ox in 0..w {
            if !map.is_occupied(ox, oy) {
                continue;
            }
            let boundary = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
                map.in_bounds(ox + dx, oy + dy) && !map.is_occupied(ox + dx, oy + dy)
            });
            if !boundary {
                continue;
            }
            for cy in (oy - reach).max(0)..=(oy + reach).min(h - 1) {
                let gy = ((cy - oy).abs() as f64 - 0.5).max(0.0);
                for cx in (ox - reach).max(0)..=(ox + reach).min(w - 1) {
                    let gx = ((cx - ox).abs() as f64 - 0.5).max(0.0);
                    let d = (gx * gx + gy * gy).sqrt() * res;
                    let idx = map.index(cx as usize, cy as usize);
                    if d < field[idx] {
                        field[idx] = d;
                    }
                }
            }
        }
    }
    field
}

/// Labels 4-connected components of cells satisfying `passable`. Returns one
/// label per cell (`usize::MAX` for impassable cells) and the component count.
pub fn label_components(map: &GridMap, passable: impl Fn(usize) -> bool) -> (Vec<usize>, usize) {
    let mut labels = vec![usize::MAX; map.width * map.height];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if labels[start] != usize::MAX || !passable(start) {
            continue;
        }
        labels[start] = count;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (cx, cy) = ((idx % map.width) as i64, (idx / map.width) as i64);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (cx + dx, cy + dy);
                if !map.in_bounds(nx, ny) {
                    continue;
                }
                let n = map.index(nx as usize, ny as usize);
                if labels[n] == usize::MAX && passable(n) {
                    labels[n] = count;
                    queue.push_back(n);
                }
            }
        }
        count += 1;
    }
    (labels, count)
}

/// Flood-fill check: every Free cell reachable from every other.
pub fn free_space_connected(map: &GridMap) -> bool {
    let cells = map.cells();
    let (_, count) = label_components(map, |i| cells[i] == Cell::Free);
    count <= 1
}

/// Samples a collision-free pose with heading uniform over multiples of 10°.
pub fn sample_free_pose(
    map: &GridMap,
    fp: &Footprint,
    rng: &mut Rng,
    max_attempts: usize,
) -> Result<Pose, GridError> {
    for _ in 0..max_attempts {
        let x = rng.random::<f64>() * map.extent_x();
        let y = rng.random::<f64>() * map.extent_y();
        let heading = 10.0 * rng.random_range(0..36u32) as f64;
        let pose = Pose::new(x, y, heading);
        if is_collision_free(map, &pose, fp) {
            return Ok(pose);
        }
    }
    Err(GridError::SamplingExhausted(max_attempts))
}

pub const DEFAULT_SAMPLE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloorplanParams {
    pub rooms: usize,
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
    pub door_width: f64,
    pub wall_thickness: f64,
    /// Agent radius the generated map must remain navigable for.
    pub footprint_radius: f64,
    pub max_attempts: usize,
}

impl Default for FloorplanParams {
    fn default() -> Self {
        Self {
            rooms: 6,
            width_m: 10.0,
            height_m: 8.0,
            resolution: 0.05,
            door_width: 1.1,
            wall_thickness: 0.1,
            footprint_radius: 0.18,
            max_attempts: 200,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Room {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Room {
    fn w(&self) -> usize {
        self.x1 - self.x0
    }
    fn h(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Generates a walled floorplan by recursive rectangular partitioning, cutting
/// one door into every partition wall. Attempts whose free space is not a
/// single component (or not navigable at the footprint radius) are resampled.
pub fn generate_floorplan(seed: u64, params: &FloorplanParams) -> Result<GridMap, GridError> {
    if params.rooms < 1 {
        return Err(GridError::InvalidParam("room count must be >= 1".into()));
    }
    if !(params.resolution > 0.0) {
        return Err(GridError::InvalidParam("resolution must be > 0".into()));
    }
    if params.door_width < 3.0 * 2.0 * params.footprint_radius {
        return Err(GridError::InvalidParam(format!(
            "door width {} must be at least 3x the footprint diameter ({})",
            params.door_width,
            6.0 * params.footprint_radius
        )));
    }
    let width = (params.width_m / params.resolution).round() as usize;
    let height = (params.height_m / params.resolution).round() as usize;
    let wall = ((params.wall_thickness / params.resolution).round() as usize).max(1);
    let door = (params.door_width / params.resolution).ceil() as usize;
    if width < 2 * wall + door || height < 2 * wall + door {
        return Err(GridError::InvalidParam(
            "map too small for its walls and doors".into(),
        ));
    }
    let fp = Footprint::new(params.footprint_radius)?;

    for attempt in 0..params.max_attempts {
        let mut rng = rng_from_seed(child_seed(seed, 0xF1002, attempt as u64));
        let Some(map) = try_partition(seed, params, width, height, wall, door, &mut rng) else {
            continue;
        };
        if !free_space_connected(&map) {
            continue;
        }
        let field = obstacle_distance_field(&map, fp.radius * 2.0);
        let (_, navigable) = label_components(&map, |i| field[i] > fp.radius);
        if navigable == 1 {
            return Ok(map);
        }
    }
    Err(GridError::Generation(format!(
        "no valid {}-room layout in {} attempts",
        params.rooms, params.max_attempts
    )))
}

fn try_partition(
    seed: u64,
    params: &FloorplanParams,
    width: usize,
    height: usize,
    wall: usize,
    door: usize,
    rng: &mut Rng,
) -> Option<GridMap> {
    let mut map = GridMap::empty(width, height, params.resolution, seed).ok()?;
    map.fill_rect(0, 0, width, wall, Cell::Occupied);
    map.fill_rect(0, height - wall, width, height, Cell::Occupied);
    map.fill_rect(0, 0, wall, height, Cell::Occupied);
    map.fill_rect(width - wall, 0, width, height, Cell::Occupied);

    // Smallest room side: a door plus clearance on both sides.
    let min_side = door + 2 * wall;
    // Partition walls must not land on a door opening of a bounding wall.
    let clearance = ((2.0 * params.footprint_radius) / params.resolution).ceil() as usize + wall;
    let mut rooms = vec![Room {
        x0: wall,
        y0: wall,
        x1: width - wall,
        y1: height - wall,
    }];

    while rooms.len() < params.rooms {
        let mut order: Vec<usize> = (0..rooms.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(rooms[i].w() * rooms[i].h()));
        let mut split_done = false;
        for idx in order {
            let room = rooms[idx];
            let vertical_first = room.w() >= room.h();
            for vertical in [vertical_first, !vertical_first] {
                let (lo, hi) = if vertical {
                    (room.x0, room.x1)
                } else {
                    (room.y0, room.y1)
                };
                if hi - lo < 2 * min_side + wall {
                    continue;
                }
                let candidates: Vec<usize> = (lo + min_side..=hi - min_side - wall)
                    .filter(|&s| wall_ends_solid(&map, &room, vertical, s, wall, clearance))
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let s = candidates[rng.random_range(0..candidates.len())];
                let (span_lo, span_hi) = if vertical {
                    (room.y0, room.y1)
                } else {
                    (room.x0, room.x1)
                };
                let door_lo = rng.random_range(span_lo + wall..=span_hi - wall - door);
                if vertical {
                    map.fill_rect(s, room.y0, s + wall, room.y1, Cell::Occupied);
                    map.fill_rect(s, door_lo, s + wall, door_lo + door, Cell::Free);
                    rooms[idx] = Room { x1: s, ..room };
                    rooms.push(Room {
                        x0: s + wall,
                        ..room
                    });
                } else {
                    map.fill_rect(room.x0, s, room.x1, s + wall, Cell::Occupied);
                    map.fill_rect(door_lo, s, door_lo + door, s + wall, Cell::Free);
                    rooms[idx] = Room { y1: s, ..room };
                    rooms.push(Room {
                        y0: s + wall,
                        ..room
                    });
                }
                split_done = true;
                break;
            }
            if split_done {
                break;
            }
        }
        if !split_done {
            return None;
        }
    }
    Some(map)
}

/// Checks that a partition wall at `s` abuts solid wall (no door) at both ends.
fn wall_ends_solid(
    map: &GridMap,
    room: &Room,
    vertical: bool,
    s: usize,
    wall: usize,
    clearance: usize,
) -> bool {
    let lo = s.saturating_sub(clearance) as i64;
    let hi = (s + wall + clearance) as i64;
    if vertical {
        let above = room.y0 as i64 - 1;
        let below = room.y1 as i64;
        (lo..hi).all(|cx| map.is_occupied(cx, above) && map.is_occupied(cx, below))
    } else {
        let left = room.x0 as i64 - 1;
        let right = room.x1 as i64;
        (lo..hi).all(|cy| map.is_occupied(left, cy) && map.is_occupied(right, cy))
    }
}
