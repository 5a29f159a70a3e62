//! Hybrid scene lighting: a parametric skydome with a peak (sun) residual,
//! surrounding radiance queried from the field, transmittance blending, and
//! the irradiance integral used by the proxy shader.
//!
//! Environment maps are equirectangular with row 0 at the zenith and the
//! column angle measured from +x toward +y.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{oetf, ActivatedGrid, Ray, Vec3, VoxelGrid, DEFAULT_SAMPLES};
use crate::par::Exec;
use crate::scene::{Rgb, SkySpec};

/// Smallest map height for which the pixel solid angles sum to 4 pi within
/// 0.1%.
pub const MIN_HEIGHT: u32 = 32;

pub const PEAK_SHARPNESS: f64 = 100.0;
pub const PEAK_THRESHOLD: f64 = 0.9;

pub const STAGE1_WEIGHTS: [f64; 4] = [1.0, 0.1, 2.0, 0.2];
pub const STAGE2_WEIGHTS: [f64; 5] = [0.5, 0.25, 0.005, 0.1, 0.2];

#[derive(Debug, Error, PartialEq)]
pub enum LightingError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fused peak direction is degenerate")]
    DegenerateMean,
    #[error("negative value where a log encoding is needed")]
    NonPositiveInput,
    #[error("need at least one view")]
    NoViews,
    #[error("invalid environment map: {0}")]
    InvalidMap(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMap {
    pub width: u32,
    pub height: u32,
    /// Row-major HDR radiance.
    pub pixels: Vec<Rgb>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl EnvironmentMap {
    pub fn constant(width: u32, height: u32, c: Rgb) -> Self {
        EnvironmentMap { width, height, pixels: vec![c; (width * height) as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(Vec3) -> Rgb) -> Self {
        let pixels = (0..height).flat_map(|v| (0..width).map(move |u| (u, v))).map(|(u, v)| f(equirect_dir(u, v, width, height))).collect();
        EnvironmentMap { width, height, pixels }
    }

    pub fn validate(&self) -> Result<(), LightingError> {
        if self.width == 0 || self.height == 0 || self.pixels.len() != (self.width * self.height) as usize {
            return Err(LightingError::InvalidMap("pixel count does not match the size".into()));
        }
        if self.pixels.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LightingError::InvalidMap("values must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn get(&self, u: u32, v: u32) -> Rgb {
        self.pixels[(v * self.width + u) as usize]
    }

    pub fn mean(&self) -> Rgb {
        let n = self.pixels.len() as f64;
        let mut m = [0.0; 3];
        for p in &self.pixels {
            for c in 0..3 {
                m[c] += p[c] / n;
            }
        }
        m
    }

    /// Mean over pixels and channels.
    pub fn mean_intensity(&self) -> f64 {
        self.mean().iter().sum::<f64>() / 3.0
    }

    fn same_shape(&self, w: u32, h: u32, what: &str) -> Result<(), LightingError> {
        if self.width != w || self.height != h {
            return Err(LightingError::ShapeMismatch(format!("{what}: {}x{} vs {w}x{h}", self.width, self.height)));
        }
        Ok(())
    }

    pub fn to_ldr(&self) -> Vec<Rgb> {
        self.pixels.iter().map(|&p| oetf(p)).collect()
    }
}

// ---------------------------------------------------------------------------
// Projection

pub fn equirect_dir(u: u32, v: u32, width: u32, height: u32) -> Vec3 {
    let theta = PI * (v as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * (u as f64 + 0.5) / width as f64;
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Nearest pixel center to direction `d`.
pub fn dir_to_pixel(d: &Vec3, width: u32, height: u32) -> (u32, u32) {
    let d = d.normalize();
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x).rem_euclid(2.0 * PI);
    let v = (theta / PI * height as f64 - 0.5).round().clamp(0.0, (height - 1) as f64) as u32;
    let u = (phi / (2.0 * PI) * width as f64 - 0.5).round().rem_euclid(width as f64) as u32;
    (u % width, v)
}

/// Solid angle of a pixel in row `v`.
pub fn pixel_solid_angle(v: u32, width: u32, height: u32) -> f64 {
    let theta = PI * (v as f64 + 0.5) / height as f64;
    (2.0 * PI / width as f64) * (PI / height as f64) * theta.sin()
}

// ---------------------------------------------------------------------------
// Peak residual

pub fn peak_direction_map(f_dir: &Vec3, width: u32, height: u32) -> ScalarMap {
    let values = (0..height)
        .flat_map(|v| (0..width).map(move |u| (u, v)))
        .map(|(u, v)| (PEAK_SHARPNESS * (equirect_dir(u, v, width, height).dot(f_dir) - 1.0)).exp())
        .collect();
    ScalarMap { width, height, values }
}

pub fn peak_intensity_map(m_dir: &ScalarMap, f_int: Rgb, threshold: f64) -> EnvironmentMap {
    EnvironmentMap {
        width: m_dir.width,
        height: m_dir.height,
        pixels: m_dir.values.iter().map(|&m| if m > threshold { f_int } else { [0.0; 3] }).collect(),
    }
}

/// Replaces `content` with the attenuated peak wherever the intensity map is
/// active.
pub fn inject_peak(content: &EnvironmentMap, f_dir: &Vec3, f_int: Rgb) -> EnvironmentMap {
    let m_dir = peak_direction_map(f_dir, content.width, content.height);
    let m_int = peak_intensity_map(&m_dir, f_int, PEAK_THRESHOLD);
    let pixels = content
        .pixels
        .iter()
        .zip(&m_dir.values)
        .zip(&m_int.pixels)
        .map(|((&c, &m), i)| if i.iter().any(|&x| x != 0.0) { i.map(|x| m * x) } else { c })
        .collect();
    EnvironmentMap { width: content.width, height: content.height, pixels }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkydomeParams {
    pub f_dir: Vec3,
    pub f_int: Rgb,
    pub content: EnvironmentMap,
}

impl SkydomeParams {
    /// Sky color above the horizon, a dimmer ground below.
    pub fn from_spec(sky: &SkySpec, width: u32, height: u32) -> Self {
        let content = EnvironmentMap::from_fn(width, height, |d| if d.z >= 0.0 { sky.sky_color } else { sky.sky_color.map(|c| 0.3 * c) });
        SkydomeParams { f_dir: Vec3::from(sky.sun_direction).normalize(), f_int: sky.sun_intensity, content }
    }

    pub fn render(&self) -> EnvironmentMap {
        inject_peak(&self.content, &self.f_dir, self.f_int)
    }
}

// ---------------------------------------------------------------------------
// Surroundings

/// Radiance and transmittance seen from `o` in every map direction, with the
/// exposure factor fixed at 1.
pub fn surrounding_map(grid: &VoxelGrid, o: &Vec3, width: u32, height: u32, exec: Exec) -> (EnvironmentMap, ScalarMap) {
    surrounding_map_activated(&grid.activate(), o, width, height, DEFAULT_SAMPLES, exec)
}

pub fn surrounding_map_activated(grid: &ActivatedGrid, o: &Vec3, width: u32, height: u32, samples: usize, exec: Exec) -> (EnvironmentMap, ScalarMap) {
    let out = exec.map_range((width * height) as usize, |i| {
        let (u, v) = (i as u32 % width, i as u32 / width);
        let r = grid.render(&Ray::towards(*o, equirect_dir(u, v, width, height)), 1.0, samples);
        (r.hdr, r.transmittance_final)
    });
    (
        EnvironmentMap { width, height, pixels: out.iter().map(|p| p.0).collect() },
        ScalarMap { width, height, values: out.iter().map(|p| p.1).collect() },
    )
}

pub fn blend(surround: &EnvironmentMap, t_map: &ScalarMap, skydome: &EnvironmentMap) -> Result<EnvironmentMap, LightingError> {
    skydome.same_shape(surround.width, surround.height, "skydome")?;
    if t_map.width != surround.width || t_map.height != surround.height {
        return Err(LightingError::ShapeMismatch("transmittance map".into()));
    }
    let pixels = surround
        .pixels
        .iter()
        .zip(&t_map.values)
        .zip(&skydome.pixels)
        .map(|((s, &t), k)| [s[0] + t * k[0], s[1] + t * k[1], s[2] + t * k[2]])
        .collect();
    Ok(EnvironmentMap { width: surround.width, height: surround.height, pixels })
}

/// Full environment at `o`: field surroundings over the skydome.
pub fn environment_at(grid: &ActivatedGrid, o: &Vec3, skydome: &EnvironmentMap, exec: Exec) -> EnvironmentMap {
    let (s, t) = surrounding_map_activated(grid, o, skydome.width, skydome.height, DEFAULT_SAMPLES, exec);
    blend(&s, &t, skydome).expect("maps share the skydome shape")
}

// ---------------------------------------------------------------------------
// Multi-view fusion

/// Averages per-camera peak estimates. `dirs[i]` is in camera `i`'s frame and
/// `rotations[i]` is that camera's camera-to-world rotation; the fused
/// direction is expressed in camera 0's frame.
pub fn fuse_views(dirs: &[Vec3], ints: &[Rgb], rotations: &[Matrix3<f64>]) -> Result<(Vec3, Rgb), LightingError> {
    if dirs.is_empty() {
        return Err(LightingError::NoViews);
    }
    if dirs.len() != ints.len() || dirs.len() != rotations.len() {
        return Err(LightingError::ShapeMismatch("dirs, ints and rotations differ in length".into()));
    }
    if dirs.len() == 1 {
        return Ok((dirs[0], ints[0]));
    }
    let to_front = rotations[0].transpose();
    let sum: Vec3 = dirs.iter().zip(rotations).map(|(d, r)| to_front * (r * d)).sum();
    let mean = sum / dirs.len() as f64;
    if mean.norm() < 1e-6 {
        return Err(LightingError::DegenerateMean);
    }
    let n = ints.len() as f64;
    let mut int = [0.0; 3];
    for i in ints {
        for c in 0..3 {
            int[c] += i[c] / n;
        }
    }
    Ok((mean.normalize(), int))
}

// ---------------------------------------------------------------------------
// Skydome losses

/// One skydome estimate, predicted or ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyEstimate {
    pub f_dir: Vec3,
    pub f_int: Rgb,
    pub hdr: EnvironmentMap,
    /// Latent sky content; only the stage-2 loss reads it.
    pub content: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Losses {
    pub dir: f64,
    pub int: f64,
    pub hdr: f64,
    pub ldr: f64,
    pub total: f64,
}

impl Stage1Losses {
    pub fn from_components(dir: f64, int: f64, hdr: f64, ldr: f64) -> Self {
        let w = STAGE1_WEIGHTS;
        Stage1Losses { dir, int, hdr, ldr, total: w[0] * dir + w[1] * int + w[2] * hdr + w[3] * ldr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Losses {
    pub dir: f64,
    pub int: f64,
    pub content: f64,
    pub hdr: f64,
    pub ldr: f64,
    pub total: f64,
}

impl Stage2Losses {
    pub fn from_components(dir: f64, int: f64, content: f64, hdr: f64, ldr: f64) -> Self {
        let w = STAGE2_WEIGHTS;
        Stage2Losses { dir, int, content, hdr, ldr, total: w[0] * dir + w[1] * int + w[2] * content + w[3] * hdr + w[4] * ldr }
    }
}

pub fn angular_error(a: &Vec3, b: &Vec3) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
}

fn log_l2(a: &[f64], b: &[f64]) -> Result<f64, LightingError> {
    if a.iter().chain(b).any(|&x| !(x >= 0.0)) {
        return Err(LightingError::NonPositiveInput);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x.ln_1p() - y.ln_1p()).powi(2)).sum())
}

fn shared_components(pred: &SkyEstimate, gt: &SkyEstimate) -> Result<[f64; 4], LightingError> {
    pred.hdr.same_shape(gt.hdr.width, gt.hdr.height, "hdr maps")?;
    let dir = angular_error(&pred.f_dir, &gt.f_dir);
    let int = log_l2(&pred.f_int, &gt.f_int)?;
    let flat = |m: &EnvironmentMap| m.pixels.iter().flatten().copied().collect::<Vec<_>>();
    let n = (3 * pred.hdr.pixels.len()) as f64;
    let hdr = log_l2(&flat(&pred.hdr), &flat(&gt.hdr))? / n;
    let ldr = pred.hdr.to_ldr().iter().flatten().zip(gt.hdr.to_ldr().iter().flatten()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    Ok([dir, int, hdr, ldr])
}

pub fn skydome_losses_stage1(pred: &SkyEstimate, gt: &SkyEstimate) -> Result<Stage1Losses, LightingError> {
    let [dir, int, hdr, ldr] = shared_components(pred, gt)?;
    Ok(Stage1Losses::from_components(dir, int, hdr, ldr))
}

pub fn skydome_losses_stage2(pred: &SkyEstimate, gt: &SkyEstimate) -> Result<Stage2Losses, LightingError> {
    if pred.content.len() != gt.content.len() || pred.content.is_empty() {
        return Err(LightingError::ShapeMismatch("content vectors".into()));
    }
    let [dir, int, hdr, ldr] = shared_components(pred, gt)?;
    let content = pred.content.iter().zip(&gt.content).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.content.len() as f64;
    Ok(Stage2Losses::from_components(dir, int, content, hdr, ldr))
}

// ---------------------------------------------------------------------------
// Irradiance

pub fn irradiance(env: &EnvironmentMap, n: &Vec3) -> Rgb {
    let mut e = [0.0; 3];
    for v in 0..env.height {
        let omega = pixel_solid_angle(v, env.width, env.height);
        for u in 0..env.width {
            let cos = n.dot(&equirect_dir(u, v, env.width, env.height));
            if cos <= 0.0 {
                continue;
            }
            let p = env.get(u, v);
            for c in 0..3 {
                e[c] += p[c] * cos * omega;
            }
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zenith_row_and_round_trip() {
        let (w, h) = (64, 32);
        let half_pixel = PI / h as f64 / 2.0;
        for u in 0..w {
            assert!(equirect_dir(u, 0, w, h).z.acos() <= half_pixel + 1e-12);
        }
        for v in 0..h {
            for u in 0..w {
                assert_eq!(dir_to_pixel(&equirect_dir(u, v, w, h), w, h), (u, v));
            }
        }
    }

    #[test]
    fn x_axis_pixel() {
        let (u, v) = dir_to_pixel(&Vec3::x(), 64, 32);
        assert!(u == 0 || u == 63);
        assert!(v == 15 || v == 16);
        let d = equirect_dir(u, v, 64, 32);
        assert!(angular_error(&d, &Vec3::x()) < 0.5 * (PI / 32.0f64).hypot(2.0 * PI / 64.0));
    }

    #[test]
    fn solid_angles_sum_to_sphere() {
        for (w, h) in [(64, MIN_HEIGHT), (96, 48), (128, 64), (256, 128), (1024, 512)] {
            let s: f64 = (0..h).map(|v| w as f64 * pixel_solid_angle(v, w, h)).sum();
            assert!((s - 4.0 * PI).abs() <= 1e-3 * 4.0 * PI, "{w}x{h}: {s}");
        }
    }

    #[test]
    fn peak_maps() {
        let f = equirect_dir(10, 5, 64, 32);
        let m = peak_direction_map(&f, 64, 32);
        assert_eq!(m.values[5 * 64 + 10], 1.0);
        assert!(m.values.iter().all(|&x| x > 0.0 && x <= 1.0));
        let int = peak_intensity_map(&m, [5.0, 4.0, 3.0], PEAK_THRESHOLD);
        assert_eq!(int.get(10, 5), [5.0, 4.0, 3.0]);
        let below = ScalarMap { width: 1, height: 1, values: vec![0.89] };
        assert_eq!(peak_intensity_map(&below, [1.0; 3], PEAK_THRESHOLD).pixels[0], [0.0; 3]);
    }

    #[test]
    fn injection_rules() {
        let content = EnvironmentMap::from_fn(64, 32, |d| [d.z.abs(), 0.2, 0.1]);
        let f_dir = Vec3::new(0.3, 0.2, 0.9).normalize();
        assert_eq!(inject_peak(&content, &f_dir, [0.0; 3]), content);
        let out = inject_peak(&content, &f_dir, [50.0, 40.0, 30.0]);
        let cutoff = 1.0 + PEAK_THRESHOLD.ln() / PEAK_SHARPNESS;
        let mut active = 0;
        for v in 0..32 {
            for u in 0..64 {
                let d = equirect_dir(u, v, 64, 32);
                let m = (PEAK_SHARPNESS * (d.dot(&f_dir) - 1.0)).exp();
                if d.dot(&f_dir) > cutoff + 1e-12 {
                    active += 1;
                    assert_eq!(out.get(u, v), [50.0 * m, 40.0 * m, 30.0 * m]);
                } else if d.dot(&f_dir) < cutoff - 1e-12 {
                    assert_eq!(out.get(u, v), content.get(u, v));
                }
            }
        }
        assert!(active >= 1);
    }

    #[test]
    fn blend_cases() {
        let s = EnvironmentMap::constant(4, 2, [1.0, 1.0, 1.0]);
        let k = EnvironmentMap::constant(4, 2, [2.0, 0.0, 0.0]);
        let half = ScalarMap { width: 4, height: 2, values: vec![0.5; 8] };
        assert_eq!(blend(&s, &half, &k).unwrap().pixels[0], [2.0, 1.0, 1.0]);
        let zero = ScalarMap { width: 4, height: 2, values: vec![0.0; 8] };
        assert_eq!(blend(&s, &zero, &k).unwrap(), s);
        let one = ScalarMap { width: 4, height: 2, values: vec![1.0; 8] };
        assert_eq!(blend(&EnvironmentMap::constant(4, 2, [0.0; 3]), &one, &k).unwrap(), k);
        let wrong = EnvironmentMap::constant(2, 2, [0.0; 3]);
        assert!(matches!(blend(&s, &half, &wrong), Err(LightingError::ShapeMismatch(_))));
    }

    #[test]
    fn fusion_cases() {
        let d = Vec3::new(0.2, -0.5, 0.8).normalize();
        assert_eq!(fuse_views(&[d], &[[1.0, 2.0, 3.0]], &[Matrix3::identity()]).unwrap(), (d, [1.0, 2.0, 3.0]));
        let world = Vec3::new(0.3, 0.4, 0.5).normalize();
        let rots: Vec<Matrix3<f64>> =
            [0.0, 1.0, 2.5].iter().map(|&y| *nalgebra::Rotation3::from_euler_angles(0.1 * y, 0.0, y).matrix()).collect();
        let dirs: Vec<Vec3> = rots.iter().map(|r| r.transpose() * world).collect();
        let (fused, int) = fuse_views(&dirs, &[[1.0; 3], [2.0; 3], [3.0; 3]], &rots).unwrap();
        assert!((fused - rots[0].transpose() * world).norm() < 1e-9);
        assert_eq!(int, [2.0; 3]);
        let i = Matrix3::identity();
        assert_eq!(fuse_views(&[d, -d], &[[0.0; 3]; 2], &[i, i]), Err(LightingError::DegenerateMean));
    }

    fn estimate(dir: Vec3) -> SkyEstimate {
        SkyEstimate { f_dir: dir, f_int: [3.0, 2.0, 1.0], hdr: EnvironmentMap::constant(8, 4, [0.4, 0.5, 0.6]), content: vec![0.1; 64] }
    }

    #[test]
    fn losses() {
        let a = estimate(Vec3::z());
        let s1 = skydome_losses_stage1(&a, &a).unwrap();
        assert_eq!(s1.total, 0.0);
        let s2 = skydome_losses_stage2(&a, &a).unwrap();
        assert_eq!(s2.total, 0.0);
        let b = estimate(Vec3::x());
        assert_relative_eq!(skydome_losses_stage1(&b, &a).unwrap().dir, PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(Stage1Losses::from_components(0.1, 0.2, 0.3, 0.4).total, 0.80, epsilon = 1e-12);
        assert_eq!(Stage2Losses::from_components(0.0, 0.0, 1.0, 0.0, 0.0).total, 0.005);
        let mut neg = a.clone();
        neg.f_int = [-0.5, 0.0, 0.0];
        assert_eq!(skydome_losses_stage1(&neg, &a), Err(LightingError::NonPositiveInput));
    }

    #[test]
    fn irradiance_cases() {
        let c = [0.7, 1.3, 2.0];
        let env = EnvironmentMap::constant(64, 32, c);
        for n in [Vec3::z(), Vec3::x(), Vec3::new(1.0, -2.0, 0.5).normalize()] {
            let e = irradiance(&env, &n);
            for k in 0..3 {
                assert!((e[k] - PI * c[k]).abs() <= 0.01 * PI * c[k]);
            }
        }
        assert_eq!(irradiance(&EnvironmentMap::constant(64, 32, [0.0; 3]), &Vec3::z()), [0.0; 3]);
        let mut one = EnvironmentMap::constant(64, 32, [0.0; 3]);
        one.pixels[10 * 64 + 7] = [100.0; 3];
        let n = equirect_dir(7, 10, 64, 32);
        let e = irradiance(&one, &n);
        assert_relative_eq!(e[0], 100.0 * pixel_solid_angle(10, 64, 32), max_relative = 1e-12);
    }

    #[test]
    fn empty_grid_surroundings() {
        let g = VoxelGrid::constant([4; 3], [-1.0; 3], [1.0; 3], 0.0, [0.5; 3]).unwrap();
        let (s, t) = surrounding_map(&g, &Vec3::zeros(), 16, 8, Exec::Sequential);
        assert!(s.pixels.iter().flatten().all(|&v| v < 1e-12));
        assert!(t.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
