//! Exposure-aware HDR voxel radiance field.
//!
//! Density and emission are stored as pre-activation values on the lattice
//! points of an axis-aligned grid; queries interpolate the softplus-activated
//! values trilinearly. A ray is rendered as
//!
//! ```text
//! I = f(dt) * sum_k T_k a_k e_k,   a_k = 1 - exp(-s_k d),   T_k = prod_{i<k} (1 - a_i)
//! ```
//!
//! with `f(dt) = 1 + eps (dt - mu) / sigma` normalizing for exposure time.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;
use crate::scene::{CameraModel, Rgb};

pub type Vec3 = Vector3<f64>;

pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_EPSILON: f64 = 0.5;
/// Lower clamp on the exposure factor.
pub const MIN_EXPOSURE_FACTOR: f64 = 1e-3;
/// sRGB linear-segment threshold.
pub const SRGB_KNEE: f64 = 0.0031308;

const RAY_CHUNK: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("invalid exposure statistics: {0}")]
    InvalidStats(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("training needs at least two views, got {0}")]
    TooFewViews(usize),
    #[error("view {index}: {reason}")]
    InvalidView { index: usize, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

// ---------------------------------------------------------------------------
// Exposure

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureStats {
    /// Mean training exposure, seconds.
    pub mu: f64,
    /// Standard deviation of training exposures, seconds.
    pub sigma: f64,
    pub epsilon: f64,
}

impl ExposureStats {
    pub fn new(mu: f64, sigma: f64, epsilon: f64) -> Result<Self, FieldError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(FieldError::InvalidStats(format!("mu = {mu} must be positive")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(FieldError::InvalidStats(format!("sigma = {sigma} must be >= 0")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(FieldError::InvalidStats(format!("epsilon = {epsilon} must be >= 0")));
        }
        Ok(ExposureStats { mu, sigma, epsilon })
    }

    /// Mean and population standard deviation of `exposures`.
    pub fn from_exposures(exposures: &[f64], epsilon: f64) -> Result<Self, FieldError> {
        if exposures.is_empty() || exposures.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(FieldError::InvalidStats("exposures must be positive".into()));
        }
        let n = exposures.len() as f64;
        let mu = exposures.iter().sum::<f64>() / n;
        let var = exposures.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / n;
        ExposureStats::new(mu, var.sqrt(), epsilon)
    }

    /// Stats under which the factor is 1 for every exposure.
    pub fn neutral(mu: f64) -> Self {
        ExposureStats { mu, sigma: 0.0, epsilon: 0.0 }
    }
}

pub fn exposure_factor(dt: f64, stats: &ExposureStats) -> f64 {
    if stats.sigma == 0.0 {
        return 1.0;
    }
    (1.0 + stats.epsilon * (dt - stats.mu) / stats.sigma).max(MIN_EXPOSURE_FACTOR)
}

// ---------------------------------------------------------------------------
// Tone curve

pub fn oetf_channel(x: f64) -> f64 {
    let y = if x <= SRGB_KNEE { 12.92 * x } else { 1.055 * x.powf(1.0 / 2.4) - 0.055 };
    y.clamp(0.0, 1.0)
}

pub fn oetf(hdr: Rgb) -> Rgb {
    hdr.map(oetf_channel)
}

/// Derivative of [`oetf_channel`]: 12.92 up to and including the knee, zero
/// where the output is clamped.
pub fn oetf_derivative(x: f64) -> f64 {
    if x <= SRGB_KNEE {
        if x < 0.0 { 0.0 } else { 12.92 }
    } else if x > 1.0 {
        0.0
    } else {
        1.055 / 2.4 * x.powf(1.0 / 2.4 - 1.0)
    }
}

pub fn psnr(a: &[Rgb], b: &[Rgb]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse = a.iter().zip(b).flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).powi(2))).sum::<f64>() / (3 * a.len()) as f64;
    10.0 * (1.0 / mse).log10()
}

// ---------------------------------------------------------------------------
// Activations

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive input");
    if y > 30.0 { y } else { y.exp_m1().ln() }
}

// ---------------------------------------------------------------------------
// Rays

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self, FieldError> {
        if ((direction.norm() - 1.0).abs()) > 1e-9 {
            return Err(FieldError::InvalidRay("direction must be unit length".into()));
        }
        if !(t_near < t_far) || !origin.iter().all(|v| v.is_finite()) {
            return Err(FieldError::InvalidRay(format!("need finite origin and t_near < t_far ({t_near}, {t_far})")));
        }
        Ok(Ray { origin, direction, t_near, t_far })
    }

    /// Normalizes `direction`; `t` runs from 0 to infinity.
    pub fn towards(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction: direction.normalize(), t_near: 0.0, t_far: f64::INFINITY }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

// ---------------------------------------------------------------------------
// Grid

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    /// Lattice points per axis (x, y, z), each at least 2.
    pub resolution: [usize; 3],
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    /// Pre-activation density, one per lattice point, x fastest.
    pub density: Vec<f64>,
    /// Pre-activation emission, three per lattice point.
    pub emission: Vec<f64>,
}

impl VoxelGrid {
    /// Grid filled with constant activated values.
    pub fn constant(resolution: [usize; 3], aabb_min: [f64; 3], aabb_max: [f64; 3], sigma: f64, emission: Rgb) -> Result<Self, FieldError> {
        let n = Self::validate_geometry(resolution, aabb_min, aabb_max)?;
        let d = if sigma > 0.0 { softplus_inv(sigma) } else { -40.0 };
        let e = emission.map(|c| if c > 0.0 { softplus_inv(c) } else { -40.0 });
        Ok(VoxelGrid {
            resolution,
            aabb_min,
            aabb_max,
            density: vec![d; n],
            emission: (0..n).flat_map(|_| e).collect(),
        })
    }

    /// Grid whose activated values at each lattice point come from `f`.
    /// Zero values map to a large negative pre-activation.
    pub fn from_fn(resolution: [usize; 3], aabb_min: [f64; 3], aabb_max: [f64; 3], f: impl Fn(Vec3) -> (f64, Rgb)) -> Result<Self, FieldError> {
        let mut g = Self::constant(resolution, aabb_min, aabb_max, 0.0, [0.0; 3])?;
        let inv = |v: f64| if v > 1e-12 { softplus_inv(v) } else { -40.0 };
        for k in 0..resolution[2] {
            for j in 0..resolution[1] {
                for i in 0..resolution[0] {
                    let idx = g.index(i, j, k);
                    let (s, e) = f(g.lattice_point(i, j, k));
                    g.density[idx] = inv(s);
                    for c in 0..3 {
                        g.emission[3 * idx + c] = inv(e[c]);
                    }
                }
            }
        }
        Ok(g)
    }

    fn validate_geometry(resolution: [usize; 3], min: [f64; 3], max: [f64; 3]) -> Result<usize, FieldError> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(FieldError::InvalidGrid("resolution must be at least 2 per axis".into()));
        }
        if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(FieldError::InvalidGrid("aabb must have min < max".into()));
        }
        Ok(resolution.iter().product())
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let n = Self::validate_geometry(self.resolution, self.aabb_min, self.aabb_max)?;
        if self.density.len() != n || self.emission.len() != 3 * n {
            return Err(FieldError::InvalidGrid("parameter arrays do not match the resolution".into()));
        }
        if self.density.iter().chain(&self.emission).any(|v| !v.is_finite()) {
            return Err(FieldError::InvalidGrid("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    pub fn lattice_point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let c = [i, j, k];
        Vec3::from_fn(|a, _| {
            self.aabb_min[a] + (self.aabb_max[a] - self.aabb_min[a]) * c[a] as f64 / (self.resolution[a] - 1) as f64
        })
    }

    pub fn activate(&self) -> ActivatedGrid {
        ActivatedGrid {
            resolution: self.resolution,
            aabb_min: self.aabb_min,
            aabb_max: self.aabb_max,
            sigma: self.density.iter().map(|&p| softplus(p)).collect(),
            emission: self.emission.chunks_exact(3).map(|e| [softplus(e[0]), softplus(e[1]), softplus(e[2])]).collect(),
        }
    }

    // Checkpoint: "VXG1", u32 nx ny nz, f64 min[3] max[3], then density and
    // emission parameters as f64, all little-endian.

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 12 + 48 + 8 * (self.density.len() + self.emission.len()));
        out.extend_from_slice(b"VXG1");
        for r in self.resolution {
            out.extend_from_slice(&(r as u32).to_le_bytes());
        }
        for v in self.aabb_min.iter().chain(&self.aabb_max).chain(&self.density).chain(&self.emission) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FieldError> {
        let bad = |m: &str| FieldError::Checkpoint(m.to_string());
        if bytes.len() < 64 || &bytes[..4] != b"VXG1" {
            return Err(bad("missing VXG1 header"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let resolution = [u(0), u(1), u(2)];
        let n: usize = resolution.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r)).ok_or_else(|| bad("resolution overflows"))?;
        let expected = 16 + 48 + 8 * 4 * n;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap());
        let grid = VoxelGrid {
            resolution,
            aabb_min: [f(0), f(1), f(2)],
            aabb_max: [f(3), f(4), f(5)],
            density: (0..n).map(|i| f(6 + i)).collect(),
            emission: (0..3 * n).map(|i| f(6 + n + i)).collect(),
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// Activated copy of a grid, ready for fast queries.
#[derive(Clone, Debug)]
pub struct ActivatedGrid {
    pub resolution: [usize; 3],
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    pub sigma: Vec<f64>,
    pub emission: Vec<Rgb>,
}

/// Eight lattice indices with trilinear weights.
pub type Corners = [(usize, f64); 8];

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub hdr: Rgb,
    pub transmittance_final: f64,
    /// `T_k a_k` per sample.
    pub weights: Vec<f64>,
    /// Sample positions along the ray.
    pub t_samples: Vec<f64>,
}

impl RenderResult {
    /// Composites a background radiance behind the field.
    pub fn with_background(&self, bg: Rgb) -> Rgb {
        [0, 1, 2].map(|c| self.hdr[c] + self.transmittance_final * bg[c])
    }

    /// Weighted mean sample distance, if the ray is mostly absorbed.
    pub fn expected_depth(&self) -> Option<f64> {
        let w: f64 = self.weights.iter().sum();
        if w < 0.5 {
            return None;
        }
        Some(self.weights.iter().zip(&self.t_samples).map(|(w, t)| w * t).sum::<f64>() / w)
    }
}

struct Sample {
    corners: Corners,
    sigma: f64,
    emission: Rgb,
    alpha: f64,
    transmittance: f64,
}

impl ActivatedGrid {
    /// Ray parameter interval inside the box, clipped to the ray's own range.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (ray.t_near, ray.t_far);
        for a in 0..3 {
            let o = ray.origin[a];
            let d = ray.direction[a];
            if d.abs() < 1e-15 {
                if o < self.aabb_min[a] || o > self.aabb_max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((self.aabb_min[a] - o) * inv, (self.aabb_max[a] - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }

    pub fn corners(&self, p: &Vec3) -> Corners {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let x = (p[a] - self.aabb_min[a]) / (self.aabb_max[a] - self.aabb_min[a]) * (n - 1) as f64;
            let x = x.clamp(0.0, (n - 1) as f64);
            let i = (x.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = x - i as f64;
        }
        let (nx, ny) = (self.resolution[0], self.resolution[1]);
        let mut out = [(0usize, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let idx = ((base[2] + dz) * ny + base[1] + dy) * nx + base[0] + dx;
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            *slot = (idx, w);
        }
        out
    }

    /// Activated (density, emission) at `p`.
    pub fn query(&self, p: &Vec3) -> (f64, Rgb) {
        let mut s = 0.0;
        let mut e = [0.0; 3];
        for (idx, w) in self.corners(p) {
            s += w * self.sigma[idx];
            for c in 0..3 {
                e[c] += w * self.emission[idx][c];
            }
        }
        (s, e)
    }

    fn march(&self, ray: &Ray, k: usize) -> Option<(f64, f64, Vec<Sample>)> {
        let (t0, t1) = self.intersect(ray)?;
        let delta = (t1 - t0) / k as f64;
        let mut transmittance = 1.0;
        let samples = (0..k)
            .map(|i| {
                let p = ray.at(t0 + (i as f64 + 0.5) * delta);
                let corners = self.corners(&p);
                let mut sigma = 0.0;
                let mut emission = [0.0; 3];
                for &(idx, w) in &corners {
                    sigma += w * self.sigma[idx];
                    for c in 0..3 {
                        emission[c] += w * self.emission[idx][c];
                    }
                }
                let alpha = 1.0 - (-sigma * delta).exp();
                let s = Sample { corners, sigma, emission, alpha, transmittance };
                transmittance *= 1.0 - alpha;
                s
            })
            .collect();
        Some((t0, delta, samples))
    }

    /// Renders one ray with exposure factor `factor` and `k` midpoint samples.
    pub fn render(&self, ray: &Ray, factor: f64, k: usize) -> RenderResult {
        let Some((t0, delta, samples)) = self.march(ray, k) else {
            return RenderResult { hdr: [0.0; 3], transmittance_final: 1.0, weights: vec![0.0; k], t_samples: vec![ray.t_near; k] };
        };
        let mut hdr = [0.0; 3];
        let mut weights = Vec::with_capacity(k);
        let mut final_t = 1.0;
        for s in &samples {
            let w = s.transmittance * s.alpha;
            weights.push(w);
            for c in 0..3 {
                hdr[c] += w * s.emission[c];
            }
            final_t = s.transmittance * (1.0 - s.alpha);
        }
        let t_samples = (0..k).map(|i| t0 + (i as f64 + 0.5) * delta).collect();
        RenderResult { hdr: hdr.map(|h| h * factor), transmittance_final: final_t, weights, t_samples }
    }

    /// Accumulates d(loss)/d(params) for one ray given d(loss)/d(hdr).
    fn backward(&self, ray: &Ray, factor: f64, k: usize, d_hdr: Rgb, sig_d: &[f64], sig_e: &[f64], grad: &mut Gradients) {
        let Some((_, delta, samples)) = self.march(ray, k) else { return };
        // Suffix sums S_k = sum_{j>k} w_j e_j, walked from the back.
        let mut suffix = [0.0; 3];
        for s in samples.iter().rev() {
            let w = s.transmittance * s.alpha;
            let t_next = s.transmittance * (1.0 - s.alpha);
            let mut d_sigma = 0.0;
            for c in 0..3 {
                d_sigma += d_hdr[c] * factor * delta * (t_next * s.emission[c] - suffix[c]);
            }
            let d_e = [0, 1, 2].map(|c| d_hdr[c] * factor * w);
            for &(idx, cw) in &s.corners {
                grad.density[idx] += d_sigma * cw * sig_d[idx];
                for c in 0..3 {
                    grad.emission[3 * idx + c] += d_e[c] * cw * sig_e[3 * idx + c];
                }
            }
            for c in 0..3 {
                suffix[c] += w * s.emission[c];
            }
            let _ = s.sigma;
        }
    }
}

/// Renders one ray through `grid`.
pub fn render_hdr(grid: &VoxelGrid, ray: &Ray, dt: f64, stats: &ExposureStats, k: usize) -> RenderResult {
    grid.activate().render(ray, exposure_factor(dt, stats), k)
}

/// Per-pixel rendering of one camera view.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldImage {
    pub width: u32,
    pub height: u32,
    pub hdr: Vec<Rgb>,
    pub transmittance: Vec<f64>,
    /// Camera z-depth; +inf where the ray is mostly transparent.
    pub depth: Vec<f64>,
}

impl FieldImage {
    pub fn to_ldr(&self) -> Vec<Rgb> {
        self.hdr.iter().map(|&h| oetf(h)).collect()
    }
}

pub fn camera_rays(camera: &CameraModel) -> Vec<Ray> {
    let o = camera.center();
    (0..camera.height)
        .flat_map(|v| (0..camera.width).map(move |u| (u, v)))
        .map(|(u, v)| Ray::towards(o, camera.pixel_direction(u, v)))
        .collect()
}

pub fn render_image(grid: &VoxelGrid, camera: &CameraModel, stats: &ExposureStats, k: usize, exec: Exec) -> FieldImage {
    let act = grid.activate();
    let factor = exposure_factor(camera.exposure_time, stats);
    let rays = camera_rays(camera);
    let forward = camera.pose.rotation().column(2).into_owned();
    let results = exec.map_slice(&rays, |r| {
        let res = act.render(r, factor, k);
        let depth = res.expected_depth().map(|d| d * r.direction.dot(&forward)).unwrap_or(f64::INFINITY);
        (res.hdr, res.transmittance_final, depth)
    });
    FieldImage {
        width: camera.width,
        height: camera.height,
        hdr: results.iter().map(|r| r.0).collect(),
        transmittance: results.iter().map(|r| r.1).collect(),
        depth: results.iter().map(|r| r.2).collect(),
    }
}

// ---------------------------------------------------------------------------
// Loss and gradients

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayTarget {
    pub ray: Ray,
    /// LDR target in [0, 1].
    pub target: Rgb,
    /// Exposure time of the source image, seconds.
    pub exposure: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub density: Vec<f64>,
    pub emission: Vec<f64>,
}

impl Gradients {
    fn zeros(n: usize) -> Self {
        Gradients { loss: 0.0, density: vec![0.0; n], emission: vec![0.0; 3 * n] }
    }

    fn add(mut self, other: Gradients) -> Gradients {
        self.loss += other.loss;
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.emission.iter_mut().zip(&other.emission) {
            *a += b;
        }
        self
    }
}

/// Mean over rays and channels of the squared LDR error.
pub fn photometric_loss(grid: &VoxelGrid, batch: &[RayTarget], stats: &ExposureStats, k: usize, exec: Exec) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let act = grid.activate();
    let sum = exec.fold_chunks(
        batch.len(),
        RAY_CHUNK,
        || 0.0,
        |acc, i| {
            let rt = &batch[i];
            let out = oetf(act.render(&rt.ray, exposure_factor(rt.exposure, stats), k).hdr);
            *acc += (0..3).map(|c| (out[c] - rt.target[c]).powi(2)).sum::<f64>();
        },
        |a, b| a + b,
    );
    sum / (3 * batch.len()) as f64
}

/// Loss and its analytic gradient with respect to the pre-activation
/// parameters.
pub fn loss_gradients(grid: &VoxelGrid, batch: &[RayTarget], stats: &ExposureStats, k: usize, exec: Exec) -> Gradients {
    let n = grid.point_count();
    if batch.is_empty() {
        return Gradients::zeros(n);
    }
    let act = grid.activate();
    let sig_d: Vec<f64> = grid.density.iter().map(|&p| sigmoid(p)).collect();
    let sig_e: Vec<f64> = grid.emission.iter().map(|&p| sigmoid(p)).collect();
    let scale = 1.0 / (3 * batch.len()) as f64;
    let mut g = exec.fold_chunks(
        batch.len(),
        RAY_CHUNK,
        || Gradients::zeros(n),
        |acc, i| {
            let rt = &batch[i];
            let factor = exposure_factor(rt.exposure, stats);
            let hdr = act.render(&rt.ray, factor, k).hdr;
            let mut d_hdr = [0.0; 3];
            for c in 0..3 {
                let r = oetf_channel(hdr[c]) - rt.target[c];
                acc.loss += r * r;
                d_hdr[c] = 2.0 * r * scale * oetf_derivative(hdr[c]);
            }
            if d_hdr.iter().any(|&d| d != 0.0) {
                act.backward(&rt.ray, factor, k, d_hdr, &sig_d, &sig_e, acc);
            }
        },
        Gradients::add,
    );
    g.loss *= scale;
    g
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub resolution: [usize; 3],
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub samples: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// False trains the ablation with the exposure factor fixed at 1.
    pub exposure_aware: bool,
    pub init_density: f64,
    pub init_emission: f64,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            resolution: [16, 16, 16],
            aabb_min: [-1.0; 3],
            aabb_max: [1.0; 3],
            steps: 1000,
            learning_rate: 0.05,
            batch_size: 4096,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            exposure_aware: true,
            init_density: 0.5,
            init_emission: 0.3,
            exec: Exec::default(),
        }
    }
}

/// Training image: row-major LDR pixels for `camera`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingView {
    pub camera: CameraModel,
    pub pixels: Vec<Rgb>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub grid: VoxelGrid,
    pub stats: ExposureStats,
    /// Batch loss per step (before the update).
    pub losses: Vec<f64>,
    /// Full-data loss after training.
    pub final_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [&mut f64], grads: impl Iterator<Item = f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            **p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Exposure statistics the trainer derives from `views`.
pub fn training_stats(views: &[TrainingView], config: &TrainConfig) -> Result<ExposureStats, FieldError> {
    let exposures: Vec<f64> = views.iter().map(|v| v.camera.exposure_time).collect();
    let stats = ExposureStats::from_exposures(&exposures, config.epsilon)?;
    Ok(if config.exposure_aware { stats } else { ExposureStats::neutral(stats.mu) })
}

pub fn training_rays(views: &[TrainingView]) -> Vec<RayTarget> {
    views
        .iter()
        .flat_map(|v| {
            camera_rays(&v.camera).into_iter().zip(&v.pixels).map(|(ray, &target)| RayTarget { ray, target, exposure: v.camera.exposure_time })
        })
        .collect()
}

/// Mini-batch Adam on the photometric loss. Deterministic for a fixed seed.
pub fn train(views: &[TrainingView], config: &TrainConfig) -> Result<TrainReport, FieldError> {
    if views.len() < 2 {
        return Err(FieldError::TooFewViews(views.len()));
    }
    for (index, v) in views.iter().enumerate() {
        v.camera.validate().map_err(|e| FieldError::InvalidView { index, reason: e.to_string() })?;
        if v.pixels.len() != (v.camera.width * v.camera.height) as usize {
            return Err(FieldError::InvalidView { index, reason: "pixel count does not match the camera".into() });
        }
    }
    let stats = training_stats(views, config)?;
    let mut grid = VoxelGrid::constant(
        config.resolution,
        config.aabb_min,
        config.aabb_max,
        config.init_density,
        [config.init_emission; 3],
    )?;
    let rays = training_rays(views);
    let mut order: Vec<usize> = (0..rays.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cursor = order.len();
    let mut adam = Adam::new(4 * grid.point_count());
    let mut losses = Vec::with_capacity(config.steps);
    let batch_size = config.batch_size.clamp(1, rays.len());
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(rays[order[cursor]]);
            cursor += 1;
        }
        let g = loss_gradients(&grid, &batch, &stats, config.samples, config.exec);
        if !g.loss.is_finite() || g.density.iter().chain(&g.emission).any(|v| !v.is_finite()) {
            return Err(FieldError::Diverged { step, loss: g.loss });
        }
        losses.push(g.loss);
        let VoxelGrid { density, emission, .. } = &mut grid;
        let mut params: Vec<&mut f64> = density.iter_mut().chain(emission.iter_mut()).collect();
        adam.step(&mut params, g.density.iter().chain(&g.emission).copied(), config.learning_rate);
    }
    let final_loss = photometric_loss(&grid, &rays, &stats, config.samples, config.exec);
    if !final_loss.is_finite() {
        return Err(FieldError::Diverged { step: config.steps, loss: final_loss });
    }
    Ok(TrainReport { grid, stats, losses, final_loss })
}
