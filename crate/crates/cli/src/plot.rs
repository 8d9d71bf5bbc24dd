//! Top-down trajectory plots: the map, the driven path, a blue start dot and
//! a green goal dot.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use visnav::gridworld::GridMap;
use visnav::sim::TraceRecord;

const FREE: Rgb<u8> = Rgb([255, 255, 255]);
const WALL: Rgb<u8> = Rgb([60, 60, 60]);
const PATH: Rgb<u8> = Rgb([220, 40, 40]);
const START: Rgb<u8> = Rgb([0, 0, 255]);
const GOAL: Rgb<u8> = Rgb([0, 170, 0]);

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("trace point ({x:.2}, {y:.2}) lies outside the {w:.2} x {h:.2} m map")]
    OutOfMap { x: f64, y: f64, w: f64, h: f64 },
    #[error("scale must be at least 1")]
    BadScale,
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

/// Distinct consecutive positions of a trace (turns do not add points).
pub fn trace_polyline(trace: &[TraceRecord]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for r in trace {
        let p = (r.x, r.y);
        if pts.last().is_none_or(|&(x, y)| (x - p.0).hypot(y - p.1) > 1e-9) {
            pts.push(p);
        }
    }
    pts
}

struct Canvas {
    img: RgbImage,
    px_per_m: f64,
}

impl Canvas {
    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let h = self.img.height() as f64;
        ((x * self.px_per_m).floor() as i64, (h - 1.0 - (y * self.px_per_m).floor()) as i64)
    }

    fn put(&mut self, px: i64, py: i64, c: Rgb<u8>) {
        if px >= 0 && py >= 0 && (px as u32) < self.img.width() && (py as u32) < self.img.height() {
            self.img.put_pixel(px as u32, py as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let (mut x0, mut y0) = self.to_px(a.0, a.1);
        let (x1, y1) = self.to_px(b.0, b.1);
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn dot(&mut self, x: f64, y: f64, r: i64, c: Rgb<u8>) {
        let (cx, cy) = self.to_px(x, y);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }
}

/// Renders the plot with `scale` pixels per map cell.
pub fn render_plot(map: &GridMap, trace: &[TraceRecord], scale: u32) -> Result<RgbImage, PlotError> {
    if scale == 0 {
        return Err(PlotError::BadScale);
    }
    let (w, h) = (map.extent_x(), map.extent_y());
    for r in trace {
        if !(0.0..=w).contains(&r.x) || !(0.0..=h).contains(&r.y) {
            return Err(PlotError::OutOfMap { x: r.x, y: r.y, w, h });
        }
    }
    let mut canvas = Canvas {
        img: RgbImage::from_pixel(map.width() as u32 * scale, map.height() as u32 * scale, FREE),
        px_per_m: scale as f64 / map.resolution(),
    };
    for cy in 0..map.height() {
        for cx in 0..map.width() {
            if map.is_occupied(cx as i64, cy as i64) {
                let row0 = (map.height() - 1 - cy) as u32 * scale;
                for py in row0..row0 + scale {
                    for px in cx as u32 * scale..(cx as u32 + 1) * scale {
                        canvas.img.put_pixel(px, py, WALL);
                    }
                }
            }
        }
    }
    let pts = trace_polyline(trace);
    for seg in pts.windows(2) {
        canvas.line(seg[0], seg[1], PATH);
    }
    let r = (2 * scale as i64).max(3);
    if let Some(first) = trace.first() {
        if let (Some(gx), Some(gy)) = (first.goal_x, first.goal_y) {
            canvas.dot(gx, gy, r, GOAL);
        }
        canvas.dot(first.x, first.y, r, START);
    }
    Ok(canvas.img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, PlotError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use visnav::discretize::Action;
    use visnav::gridworld::Pose;

    fn straight_trace() -> Vec<TraceRecord> {
        let mut pose = Pose::new(1.0, 1.0, 0.0);
        let mut trace = vec![TraceRecord::new(0, &pose, None)];
        trace[0].goal_x = Some(2.0);
        trace[0].goal_y = Some(1.0);
        for k in 1..=10 {
            pose = Action::Forward.apply(&pose);
            trace.push(TraceRecord::new(k, &pose, Some(Action::Forward)));
        }
        trace
    }

    #[test]
    fn straight_meter_gives_eleven_points() {
        let pts = trace_polyline(&straight_trace());
        assert_eq!(pts.len(), 11);
        for w in pts.windows(2) {
            assert!(((w[1].0 - w[0].0).hypot(w[1].1 - w[0].1) - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn turns_do_not_add_points() {
        let pose = Pose::new(1.0, 1.0, 0.0);
        let trace = vec![TraceRecord::new(0, &pose, None), TraceRecord::new(1, &pose.rotated(10.0), Some(Action::Left))];
        assert_eq!(trace_polyline(&trace).len(), 1);
    }

    #[test]
    fn empty_trace_is_map_only_and_output_is_deterministic() {
        let map = GridMap::walled(60, 40, 0.05, 0).unwrap();
        let img = render_plot(&map, &[], 2).unwrap();
        assert_eq!(img.dimensions(), (120, 80));
        assert!(img.pixels().all(|p| *p == FREE || *p == WALL));
        let t = straight_trace();
        let a = encode_png(&render_plot(&map, &t, 2).unwrap()).unwrap();
        let b = encode_png(&render_plot(&map, &t, 2).unwrap()).unwrap();
        assert_eq!(a, b);
        let img = render_plot(&map, &t, 2).unwrap();
        assert!(img.pixels().any(|p| *p == START));
        assert!(img.pixels().any(|p| *p == GOAL));
        assert!(img.pixels().any(|p| *p == PATH));
    }

    #[test]
    fn points_outside_the_map_are_rejected() {
        let map = GridMap::walled(20, 20, 0.05, 0).unwrap();
        assert!(matches!(render_plot(&map, &straight_trace(), 1), Err(PlotError::OutOfMap { .. })));
    }
}
