//! Deterministic top-down raster of a scene: lane map, trajectories and
//! vehicle boxes, north up.

use crate::compositor::scene_boxes;
use crate::scene::{LaneType, Point2, Rgb, SceneGraph};

/// Meters per pixel.
pub const RESOLUTION: f64 = 0.2;
const MARGIN: f64 = 5.0;
const MAX_SIDE: u32 = 2000;

pub const BACKGROUND: Rgb = [0.12, 0.12, 0.12];
pub const CENTERLINE: Rgb = [0.45, 0.45, 0.45];
pub const BOUNDARY: Rgb = [0.85, 0.85, 0.85];
pub const EGO: Rgb = [0.1, 0.9, 0.3];
const EGO_SIZE: [f64; 2] = [4.5, 1.9];

#[derive(Clone, Debug, PartialEq)]
pub struct TopDown {
    pub width: u32,
    pub height: u32,
    /// World coordinates of the top-left image corner.
    pub min_x: f64,
    pub max_y: f64,
    pub pixels: Vec<Rgb>,
}

impl TopDown {
    pub fn world_to_pixel(&self, p: &Point2) -> Option<(u32, u32)> {
        let u = ((p.x - self.min_x) / RESOLUTION).floor();
        let v = ((self.max_y - p.y) / RESOLUTION).floor();
        (u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64).then_some((u as u32, v as u32))
    }

    pub fn pixel_center(&self, u: u32, v: u32) -> Point2 {
        Point2::new(self.min_x + (u as f64 + 0.5) * RESOLUTION, self.max_y - (v as f64 + 0.5) * RESOLUTION)
    }

    pub fn get(&self, u: u32, v: u32) -> Rgb {
        self.pixels[(v * self.width + u) as usize]
    }

    fn put(&mut self, p: &Point2, c: Rgb) {
        if let Some((u, v)) = self.world_to_pixel(p) {
            self.pixels[(v * self.width + u) as usize] = c;
        }
    }

    fn line(&mut self, a: Point2, b: Point2, c: Rgb) {
        let n = ((b - a).norm() / (0.5 * RESOLUTION)).ceil().max(1.0) as usize;
        for i in 0..=n {
            self.put(&(a + (b - a) * (i as f64 / n as f64)), c);
        }
    }

    /// Fills the rectangle of `size` (length, width) centered at `center`.
    fn rect(&mut self, center: Point2, size: [f64; 2], heading: f64, c: Rgb) {
        let (s, co) = heading.sin_cos();
        let r = 0.5 * size[0].hypot(size[1]);
        let lo = self.world_to_pixel_clamped(&(center + Point2::new(-r, r)));
        let hi = self.world_to_pixel_clamped(&(center + Point2::new(r, -r)));
        for v in lo.1..=hi.1 {
            for u in lo.0..=hi.0 {
                let d = self.pixel_center(u, v) - center;
                let (lx, ly) = (co * d.x + s * d.y, -s * d.x + co * d.y);
                if lx.abs() <= 0.5 * size[0] && ly.abs() <= 0.5 * size[1] {
                    self.pixels[(v * self.width + u) as usize] = c;
                }
            }
        }
    }

    fn world_to_pixel_clamped(&self, p: &Point2) -> (u32, u32) {
        let u = ((p.x - self.min_x) / RESOLUTION).floor().clamp(0.0, (self.width - 1) as f64);
        let v = ((self.max_y - p.y) / RESOLUTION).floor().clamp(0.0, (self.height - 1) as f64);
        (u as u32, v as u32)
    }
}

/// Raster of `scene` at `frame`, framed on the lane map and ego.
pub fn render_topdown(scene: &SceneGraph, frame: usize) -> TopDown {
    let ego = scene.ego.position2();
    let mut lo = ego;
    let mut hi = ego;
    for n in &scene.lane_map.nodes {
        for p in [n.start(), n.end()] {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    lo -= Point2::repeat(MARGIN);
    hi += Point2::repeat(MARGIN);
    let width = (((hi.x - lo.x) / RESOLUTION).ceil() as u32).clamp(1, MAX_SIDE);
    let height = (((hi.y - lo.y) / RESOLUTION).ceil() as u32).clamp(1, MAX_SIDE);
    let mut img = TopDown { width, height, min_x: lo.x, max_y: hi.y, pixels: vec![BACKGROUND; (width * height) as usize] };
    for n in &scene.lane_map.nodes {
        let c = if n.lane_type() == LaneType::Boundary { BOUNDARY } else { CENTERLINE };
        img.line(n.start(), n.end(), c);
    }
    for v in scene.vehicles_by_seq() {
        let color = v.color_override.or_else(|| scene.asset(&v.asset_id).ok().map(|a| a.color)).unwrap_or([1.0; 3]);
        let pale = color.map(|c| 0.5 + 0.5 * c);
        for w in v.trajectory.samples.windows(2) {
            img.line(w[0].position(), w[1].position(), pale);
        }
    }
    let ego_pose = scene.view_pose(frame, crate::motion::FRAME_RATE);
    img.rect(ego_pose.position2(), EGO_SIZE, ego_pose.yaw(), EGO);
    for b in scene_boxes(scene, frame) {
        img.rect(Point2::new(b.center[0], b.center[1]), [b.dimensions[0], b.dimensions[1]], b.heading, b.color);
    }
    img
}
