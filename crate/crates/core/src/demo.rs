//! Synthetic content: the demo asset bank, camera rig, street field, and the
//! desk-scale blob scene used to check training.

use std::f64::consts::TAU;

use crate::field::{render_image, ExposureStats, TrainingView, Vec3, VoxelGrid, DEFAULT_SAMPLES};
use crate::maps::crossroad;
use crate::par::Exec;
use crate::scene::{AssetRecord, BackgroundVehicle, CameraModel, Pose, Rgb, SceneGraph};

fn asset(id: &str, type_label: &str, brand: Option<&str>, color: Rgb, dimensions: [f64; 3]) -> AssetRecord {
    AssetRecord {
        id: id.into(),
        type_label: type_label.into(),
        brand_tags: brand.map(|b| vec![b.to_string()]).unwrap_or_default(),
        color,
        dimensions,
        origin_at_bottom_center: true,
        faces_plus_x: true,
    }
}

pub fn asset_bank() -> Vec<AssetRecord> {
    const CAR: [f64; 3] = [4.4, 1.8, 1.5];
    vec![
        asset("car-001", "car", Some("Mini"), [0.8, 0.8, 0.8], [3.9, 1.7, 1.4]),
        asset("car-002", "car", Some("Porsche"), [0.9, 0.8, 0.1], [4.5, 1.85, 1.3]),
        asset("car-003", "car", Some("Chevrolet"), [0.1, 0.2, 0.8], CAR),
        asset("car-004", "police", Some("Ford"), [0.95, 0.95, 0.95], [5.0, 2.0, 1.6]),
        asset("car-005", "sedan", Some("Toyota"), [0.8, 0.05, 0.05], [4.8, 1.8, 1.45]),
        asset("car-006", "truck", Some("Ford"), [0.3, 0.3, 0.35], [7.5, 2.5, 3.2]),
        asset("car-007", "suv", Some("BMW"), [0.05, 0.05, 0.05], [4.9, 2.0, 1.75]),
        asset("car-008", "bus", None, [1.0, 0.8, 0.0], [12.0, 2.55, 3.2]),
        asset("car-009", "taxi", Some("Toyota"), [1.0, 0.85, 0.1], [4.6, 1.8, 1.5]),
        asset("car-010", "van", Some("Mercedes"), [0.95, 0.95, 0.95], [5.3, 2.0, 2.0]),
        asset("car-011", "car", Some("Tesla"), [0.85, 0.1, 0.1], [4.7, 1.9, 1.45]),
        asset("car-012", "car", Some("Audi"), [0.5, 0.5, 0.5], CAR),
    ]
}

/// Three forward cameras on the roof, in the ego frame (x forward, z up).
pub fn rig() -> Vec<CameraModel> {
    let eye = Vec3::new(1.5, 0.0, 1.6);
    [0.0f64, 40.0, -40.0]
        .iter()
        .zip([0.01, 0.005, 0.02])
        .map(|(&yaw, exposure)| {
            let r = yaw.to_radians();
            CameraModel::look_at(eye, eye + Vec3::new(r.cos(), r.sin(), -0.05), 96, 48, 70.0, exposure)
        })
        .collect()
}

pub fn background_vehicles() -> Vec<BackgroundVehicle> {
    vec![
        BackgroundVehicle {
            id: "bg-001".into(),
            type_label: "car".into(),
            color: [0.2, 0.5, 0.3],
            center: [28.0, 3.5, 0.72],
            dimensions: [4.4, 1.8, 1.45],
            heading: std::f64::consts::PI,
        },
        BackgroundVehicle {
            id: "bg-002".into(),
            type_label: "truck".into(),
            color: [0.6, 0.6, 0.65],
            center: [70.0, -3.5, 1.6],
            dimensions: [7.5, 2.5, 3.2],
            heading: 0.0,
        },
    ]
}

pub fn demo_stats() -> ExposureStats {
    ExposureStats::from_exposures(&rig().iter().map(|c| c.exposure_time).collect::<Vec<_>>(), crate::field::DEFAULT_EPSILON)
        .expect("rig exposures are positive")
}

/// Blocky street around the demo crossroad: asphalt, grass verges and a row
/// of colored buildings on each side.
pub fn street_grid() -> VoxelGrid {
    let buildings: [(f64, f64, f64, Rgb); 6] = [
        (-5.0, 18.0, 9.0, [0.55, 0.35, 0.25]),
        (20.0, 36.0, 6.0, [0.7, 0.65, 0.5]),
        (56.0, 80.0, 11.0, [0.35, 0.4, 0.55]),
        (85.0, 105.0, 7.0, [0.6, 0.3, 0.3]),
        (0.0, 30.0, 8.0, [0.45, 0.5, 0.4]),
        (60.0, 100.0, 10.0, [0.65, 0.6, 0.6]),
    ];
    VoxelGrid::from_fn([61, 25, 9], [-10.0, -22.0, -1.0], [110.0, 26.0, 15.0], |p| {
        if p.z <= 0.0 {
            let road = p.y.abs() < 9.0 || (p.x - 45.0).abs() < 9.0;
            return (20.0, if road { [0.08, 0.08, 0.09] } else { [0.1, 0.25, 0.08] });
        }
        let side = if p.y > 0.0 { 0 } else { 4 };
        let in_lot = p.y.abs() > 14.0 && (p.x - 45.0).abs() > 12.0;
        for (i, &(x0, x1, h, c)) in buildings.iter().enumerate() {
            let same_side = if i < 4 { side == 0 } else { side == 4 };
            if same_side && in_lot && p.x >= x0 && p.x <= x1 && p.z <= h {
                return (20.0, c);
            }
        }
        (0.0, [0.0; 3])
    })
    .expect("static geometry is valid")
}

/// Demo scene on the crossroad with ego at the origin facing +x.
pub fn demo_scene(seed: u64) -> SceneGraph {
    let mut s = SceneGraph::new("field.vxg", crossroad(), Pose::identity(), rig(), asset_bank());
    s.background_vehicles = background_vehicles();
    s.seed = seed;
    s
}

// ---------------------------------------------------------------------------
// Blob scene

/// Smooth colored blob in [-1, 1]^3 with HDR emission up to about 2.
pub fn blob_grid(resolution: usize) -> VoxelGrid {
    VoxelGrid::from_fn([resolution; 3], [-1.0; 3], [1.0; 3], |p| {
        let a = (-(p - Vec3::new(0.2, -0.1, 0.0)).norm_squared() / 0.18).exp();
        let b = (-(p - Vec3::new(-0.35, 0.3, 0.15)).norm_squared() / 0.08).exp();
        let sigma = 6.0 * a + 9.0 * b;
        let e = [1.6 * a + 0.3 * b + 0.05 * (1.0 + p.x), 0.5 * a + 1.2 * b + 0.05, 0.3 + 0.4 * p.z.max(-0.5) + 0.6 * b];
        (sigma, e.map(|c: f64| c.max(0.0)))
    })
    .expect("static geometry is valid")
}

/// Camera on a circle of radius 3 around the origin, looking at it.
pub fn ring_camera(azimuth: f64, elevation: f64, exposure: f64, size: u32) -> CameraModel {
    let eye = Vec3::new(azimuth.cos() * elevation.cos(), azimuth.sin() * elevation.cos(), elevation.sin()) * 3.0;
    CameraModel::look_at(eye, Vec3::zeros(), size, size, 45.0, exposure)
}

/// `n` ring views rendered from `truth`, exposures assigned cyclically.
pub fn ring_views(truth: &VoxelGrid, n: usize, exposures: &[f64], stats: &ExposureStats, size: u32, exec: Exec) -> Vec<TrainingView> {
    (0..n)
        .map(|i| {
            let az = TAU * i as f64 / n as f64;
            let el = if i % 2 == 0 { 0.35 } else { -0.2 };
            let camera = ring_camera(az, el, exposures[i % exposures.len()], size);
            let pixels = render_image(truth, &camera, stats, DEFAULT_SAMPLES, exec).to_ldr();
            TrainingView { camera, pixels }
        })
        .collect()
}
