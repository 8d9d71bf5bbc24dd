//! Column raycaster producing egocentric RGBD observations.
//!
//! Each image column is one ray. Rays march cell-by-cell (exact grid
//! traversal) until they enter an Occupied cell or exceed `max_range`. The
//! depth channel stores the raw hit range divided by `max_range`, constant
//! down the column; the RGB channels draw a wall band whose height falls off
//! with perpendicular distance, over fixed ceiling and floor colors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{GridMap, Pose};

pub const CHANNELS: usize = 4;
pub const PANORAMA_VIEWS: usize = 8;

const CEILING: [f32; 3] = [0.86, 0.86, 0.9];
const FLOOR: [f32; 3] = [0.38, 0.32, 0.26];
/// Half wall height in image-height units at one meter of perpendicular range.
const WALL_SCALE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("image export failed: {0}")]
    Export(String),
    #[error("image data length {got} does not match {width}x{height}x4")]
    BadLength {
        got: usize,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraParams {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub max_range: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            fov_deg: 90.0,
            max_range: 10.0,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width < 8 || self.height < 8 {
            return Err(RenderError::InvalidCamera(format!(
                "image must be at least 8x8, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(RenderError::InvalidCamera(format!(
                "fov must be in (0, 180), got {}",
                self.fov_deg
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(RenderError::InvalidCamera(format!(
                "max_range must be > 0, got {}",
                self.max_range
            )));
        }
        Ok(())
    }

    pub fn values_per_image(&self) -> usize {
        self.width * self.height * CHANNELS
    }

    /// Angle of column `col` relative to the heading, in degrees. Column 0 is
    /// the leftmost (counter-clockwise) edge of the view.
    pub fn column_offset_deg(&self, col: usize) -> f64 {
        self.fov_deg / 2.0 - (col as f64 + 0.5) * self.fov_deg / self.width as f64
    }
}

/// RGBD image stored row-major with interleaved channels (R, G, B, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbdImage {
    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RenderError> {
        if data.len() != width * height * CHANNELS {
            return Err(RenderError::BadLength {
                got: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 4] {
        let i = (row * self.width + col) * CHANNELS;
        [
            self.data[i],
            self.data[i + 1],
            self.data[i + 2],
            self.data[i + 3],
        ]
    }

    pub fn depth(&self, row: usize, col: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + 3]
    }

    /// Planar channel-major copy (C, H, W) for convolutional networks.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * CHANNELS];
        for p in 0..plane {
            for c in 0..CHANNELS {
                out[c * plane + p] = self.data[p * CHANNELS + c];
            }
        }
        out
    }

    pub fn from_chw(width: usize, height: usize, chw: &[f32]) -> Result<Self, RenderError> {
        let plane = width * height;
        if chw.len() != plane * CHANNELS {
            return Err(RenderError::BadLength {
                got: chw.len(),
                width,
                height,
            });
        }
        let mut data = vec![0.0; chw.len()];
        for p in 0..plane {
            for c in 0..CHANNELS {
                data[p * CHANNELS + c] = chw[c * plane + p];
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn values_in_unit_interval(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Writes RGB on the left and depth (as gray) on the right.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let mut img = image::RgbImage::new((self.width * 2) as u32, self.height as u32);
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        for row in 0..self.height {
            for col in 0..self.width {
                let [r, g, b, d] = self.pixel(row, col);
                img.put_pixel(
                    col as u32,
                    row as u32,
                    image::Rgb([to_u8(r), to_u8(g), to_u8(b)]),
                );
                let dv = to_u8(d);
                img.put_pixel(
                    (col + self.width) as u32,
                    row as u32,
                    image::Rgb([dv, dv, dv]),
                );
            }
        }
        img.save_with_format(path.as_ref(), image::ImageFormat::Png)
            .map_err(|e| RenderError::Export(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub cell: (i64, i64),
    /// True when the ray entered the hit cell through a vertical (x) face.
    pub x_side: bool,
}

/// Exact grid traversal from `(x, y)` along `angle_deg`. Returns the first
/// Occupied cell entered within `max_range`, or `None`.
pub fn cast_ray(map: &GridMap, x: f64, y: f64, angle_deg: f64, max_range: f64) -> Option<RayHit> {
    let res = map.resolution();
    let (mut cx, mut cy) = map.cell_of(x, y);
    if map.is_occupied(cx, cy) {
        return Some(RayHit {
            distance: 0.0,
            cell: (cx, cy),
            x_side: true,
        });
    }
    let rad = angle_deg.to_radians();
    let (dx, dy) = (rad.cos(), rad.sin());
    let (step_x, mut t_max_x, t_delta_x) = axis_setup(x, dx, cx, res);
    let (step_y, mut t_max_y, t_delta_y) = axis_setup(y, dy, cy, res);
    loop {
        let (t, x_side) = if t_max_x <= t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            (t, true)
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            (t, false)
        };
        if t > max_range {
            return None;
        }
        if map.is_occupied(cx, cy) {
            return Some(RayHit {
                distance: t,
                cell: (cx, cy),
                x_side,
            });
        }
    }
}

fn axis_setup(pos: f64, dir: f64, cell: i64, res: f64) -> (i64, f64, f64) {
    // Components below this are treated as parallel to the axis.
    if dir.abs() < 1e-12 {
        (0, f64::INFINITY, f64::INFINITY)
    } else if dir > 0.0 {
        (1, ((cell + 1) as f64 * res - pos) / dir, res / dir)
    } else {
        (-1, (cell as f64 * res - pos) / dir, -res / dir)
    }
}

/// Renders the egocentric RGBD view at `pose`.
pub fn render(map: &GridMap, pose: &Pose, cam: &CameraParams) -> RgbdImage {
    let (w, h) = (cam.width, cam.height);
    let mut data = vec![0.0f32; w * h * CHANNELS];
    for col in 0..w {
        let offset = cam.column_offset_deg(col);
        let hit = cast_ray(map, pose.x, pose.y, pose.heading + offset, cam.max_range);
        let (depth, band_half, wall) = match hit {
            Some(hit) => {
                let perp = (hit.distance * offset.to_radians().cos()).max(1e-6);
                let rel = (hit.distance / cam.max_range).min(1.0);
                let shade = (1.0 - 0.75 * rel) * if hit.x_side { 1.0 } else { 0.8 };
                let base = map.cell_color(hit.cell.0, hit.cell.1);
                let color = base.map(|c| (c as f64 * shade) as f32);
                (rel as f32, (h as f64 / 2.0) * WALL_SCALE / perp, color)
            }
            None => (1.0, 0.0, [0.0; 3]),
        };
        for row in 0..h {
            let from_center = (row as f64 + 0.5) - h as f64 / 2.0;
            let rgb = if from_center.abs() <= band_half {
                wall
            } else if from_center < 0.0 {
                CEILING
            } else {
                FLOOR
            };
            let i = (row * w + col) * CHANNELS;
            data[i..i + 3].copy_from_slice(&rgb);
            data[i + 3] = depth;
        }
    }
    RgbdImage {
        width: w,
        height: h,
        data,
    }
}

/// Eight views at the same position, view `k` at heading `pose.heading + 45k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramicGoal {
    pub images: Vec<RgbdImage>,
    pub capture_pose: Pose,
}

pub fn capture_panorama(map: &GridMap, pose: &Pose, cam: &CameraParams) -> PanoramicGoal {
    let images = (0..PANORAMA_VIEWS)
        .map(|k| render(map, &pose.rotated(45.0 * k as f64), cam))
        .collect();
    PanoramicGoal {
        images,
        capture_pose: *pose,
    }
}
