//! Proxy foreground rendering and per-pixel depth composition.
//!
//! Depth values are camera z-depths in meters; any non-finite value marks a
//! missing depth and is treated as +infinity. Depth ties go to the background.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{oetf, render_image, ExposureStats, Ray, Vec3, VoxelGrid, DEFAULT_SAMPLES};
use crate::lighting::{environment_at, irradiance, EnvironmentMap, SkydomeParams};
use crate::par::Exec;
use crate::scene::{CameraModel, Pose, Rgb, SceneGraph};

/// Resolution of per-vehicle environment maps.
pub const ENV_WIDTH: u32 = 64;
pub const ENV_HEIGHT: u32 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum CompositorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("camera {0} is not in the rig")]
    UnknownCamera(usize),
    #[error("expected {expected} environment maps, got {got}")]
    EnvCount { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        DepthMap { width, height, values: vec![f64::INFINITY; (width * height) as usize] }
    }
}

/// Patch id per pixel; 0 is unassigned.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMask {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbaImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 4]>,
}

fn valid_depth(d: f64) -> Option<f64> {
    (d.is_finite() && d > 0.0).then_some(d)
}

/// Mean valid sparse depth per patch; +inf for patches without one.
pub fn patch_depths(sparse: &DepthMap, mask: &SegmentMask) -> Result<BTreeMap<u32, f64>, CompositorError> {
    if sparse.width != mask.width || sparse.height != mask.height || sparse.values.len() != mask.ids.len() {
        return Err(CompositorError::ShapeMismatch("sparse depth vs mask".into()));
    }
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&id, &d) in mask.ids.iter().zip(&sparse.values) {
        if id == 0 {
            continue;
        }
        let e = acc.entry(id).or_insert((0.0, 0));
        if let Some(d) = valid_depth(d) {
            e.0 += d;
            e.1 += 1;
        }
    }
    Ok(acc.into_iter().map(|(id, (s, n))| (id, if n == 0 { f64::INFINITY } else { s / n as f64 })).collect())
}

/// Dense depth with every pixel set to its patch's depth.
pub fn patch_depth_map(sparse: &DepthMap, mask: &SegmentMask) -> Result<DepthMap, CompositorError> {
    let depths = patch_depths(sparse, mask)?;
    let values = mask.ids.iter().map(|id| depths.get(id).copied().unwrap_or(f64::INFINITY)).collect();
    Ok(DepthMap { width: mask.width, height: mask.height, values })
}

/// Takes the foreground where it is covered and strictly nearer.
pub fn composite(fg: &RgbaImage, fg_depth: &DepthMap, bg: &[Rgb], bg_depth: &DepthMap) -> Result<Vec<Rgb>, CompositorError> {
    let n = bg.len();
    if fg.pixels.len() != n || fg_depth.values.len() != n || bg_depth.values.len() != n {
        return Err(CompositorError::ShapeMismatch("foreground, background and depths must match".into()));
    }
    Ok((0..n)
        .map(|i| {
            let f = fg.pixels[i];
            let fd = valid_depth(fg_depth.values[i]).unwrap_or(f64::INFINITY);
            let bd = valid_depth(bg_depth.values[i]).unwrap_or(f64::INFINITY);
            if f[3] > 0.0 && fd < bd { [f[0], f[1], f[2]] } else { bg[i] }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Proxy boxes

/// Oriented vehicle box standing on the ground plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyBox {
    pub id: String,
    /// Box center in world coordinates.
    pub center: [f64; 3],
    /// `(length, width, height)`.
    pub dimensions: [f64; 3],
    pub heading: f64,
    pub color: Rgb,
}

impl ProxyBox {
    fn rotation(&self) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vec3::z_axis(), self.heading).matrix()
    }

    /// Nearest hit distance and world-space outward normal.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        let r = self.rotation();
        let o = r.transpose() * (ray.origin - Vec3::from(self.center));
        let d = r.transpose() * ray.direction;
        let half = Vec3::from(self.dimensions) * 0.5;
        let (mut t0, mut t1) = (ray.t_near, ray.t_far);
        let mut axis = None;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > half[a] {
                    return None;
                }
                continue;
            }
            let ta = (-half[a] - o[a]) / d[a];
            let tb = (half[a] - o[a]) / d[a];
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            if lo > t0 {
                t0 = lo;
                axis = Some(a);
            }
            t1 = t1.min(hi);
        }
        let a = axis?;
        if t0 > t1 || t0 <= 0.0 {
            return None;
        }
        let mut n = Vec3::zeros();
        n[a] = -d[a].signum();
        Some((t0, r * n))
    }

    /// Face normals in world space: +x, -x, +y, -y, +z, -z in the box frame.
    pub fn face_normals(&self) -> [Vec3; 6] {
        let r = self.rotation();
        [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()].map(|n| r * n)
    }
}

/// Boxes for every visible vehicle at `frame`: background vehicles first,
/// then inserted vehicles in creation order. Trajectories hold their last
/// sample past the end.
pub fn scene_boxes(scene: &SceneGraph, frame: usize) -> Vec<ProxyBox> {
    let mut out: Vec<ProxyBox> = scene
        .visible_background()
        .map(|b| ProxyBox { id: b.id.clone(), center: b.center, dimensions: b.dimensions, heading: b.heading, color: b.color })
        .collect();
    for v in scene.vehicles_by_seq() {
        let Ok(asset) = scene.asset(&v.asset_id) else { continue };
        let Some(s) = v.trajectory.at_frame(frame).or(v.trajectory.samples.last()) else { continue };
        out.push(ProxyBox {
            id: v.instance_id.clone(),
            center: [s.x, s.y, 0.5 * asset.dimensions[2]],
            dimensions: asset.dimensions,
            heading: s.heading,
            color: v.color_override.unwrap_or(asset.color),
        });
    }
    out
}

/// Renders boxes lit by one environment map each (same order as `boxes`).
/// Output color is linear HDR.
pub fn render_boxes(boxes: &[ProxyBox], camera: &CameraModel, envs: &[EnvironmentMap], exec: Exec) -> Result<(RgbaImage, DepthMap), CompositorError> {
    if envs.len() != boxes.len() {
        return Err(CompositorError::EnvCount { expected: boxes.len(), got: envs.len() });
    }
    let (w, h) = (camera.width, camera.height);
    let face_colors: Vec<[(Vec3, Rgb); 6]> = boxes
        .iter()
        .zip(envs)
        .map(|(b, env)| {
            b.face_normals().map(|n| {
                let e = irradiance(env, &n);
                (n, [0, 1, 2].map(|c| b.color[c] / std::f64::consts::PI * e[c]))
            })
        })
        .collect();
    let forward = camera.pose.rotation().column(2).into_owned();
    let o = camera.center();
    let px = exec.map_range((w * h) as usize, |i| {
        let ray = Ray::towards(o, camera.pixel_direction(i as u32 % w, i as u32 / w));
        let mut best: Option<(f64, usize, Vec3)> = None;
        for (bi, b) in boxes.iter().enumerate() {
            if let Some((t, n)) = b.intersect(&ray) {
                if best.as_ref().is_none_or(|x| t < x.0) {
                    best = Some((t, bi, n));
                }
            }
        }
        match best {
            None => ([0.0; 4], f64::INFINITY),
            Some((t, bi, n)) => {
                let faces = &face_colors[bi];
                let c = faces.iter().max_by(|a, b| a.0.dot(&n).total_cmp(&b.0.dot(&n))).unwrap().1;
                ([c[0], c[1], c[2], 1.0], t * ray.direction.dot(&forward))
            }
        }
    });
    Ok((
        RgbaImage { width: w, height: h, pixels: px.iter().map(|p| p.0).collect() },
        DepthMap { width: w, height: h, values: px.iter().map(|p| p.1).collect() },
    ))
}

pub fn render_proxy_boxes(scene: &SceneGraph, frame: usize, camera: &CameraModel, envs: &[EnvironmentMap], exec: Exec) -> Result<(RgbaImage, DepthMap), CompositorError> {
    render_boxes(&scene_boxes(scene, frame), camera, envs, exec)
}

/// Rig camera `index` placed on the edited ego pose at `frame`.
pub fn frame_camera(scene: &SceneGraph, index: usize, frame: usize, sample_rate: f64) -> Result<CameraModel, CompositorError> {
    let cam = scene.rig.get(index).ok_or(CompositorError::UnknownCamera(index))?;
    let ego: Pose = scene.view_pose(frame, sample_rate);
    Ok(cam.with_pose(ego.compose(&cam.pose)))
}

/// Field background with the lit proxy foreground, after the tone curve.
pub fn render_camera_view(
    scene: &SceneGraph,
    grid: &VoxelGrid,
    stats: &ExposureStats,
    camera_index: usize,
    frame: usize,
    sample_rate: f64,
    exec: Exec,
) -> Result<Vec<Rgb>, CompositorError> {
    let camera = frame_camera(scene, camera_index, frame, sample_rate)?;
    let bg = render_image(grid, &camera, stats, DEFAULT_SAMPLES, exec);
    let boxes = scene_boxes(scene, frame);
    let sky = SkydomeParams::from_spec(&scene.sky, ENV_WIDTH, ENV_HEIGHT).render();
    let act = grid.activate();
    let envs: Vec<EnvironmentMap> = boxes.iter().map(|b| environment_at(&act, &Vec3::from(b.center), &sky, exec)).collect();
    let (fg, fg_depth) = render_boxes(&boxes, &camera, &envs, exec)?;
    let bg_depth = DepthMap { width: bg.width, height: bg.height, values: bg.depth };
    let hdr = composite(&fg, &fg_depth, &bg.hdr, &bg_depth)?;
    Ok(hdr.into_iter().map(oetf).collect())
}
