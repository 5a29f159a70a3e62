use drivesim_core::demo::{blob_grid, ring_camera, ring_views};
use drivesim_core::field::*;
use drivesim_core::Exec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(n: usize, seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = VoxelGrid::constant([n; 3], [-1.0; 3], [1.0; 3], 1.0, [0.5; 3]).unwrap();
    for p in g.density.iter_mut() {
        *p = rng.random_range(-2.0..1.5);
    }
    for p in g.emission.iter_mut() {
        *p = rng.random_range(-3.0..-0.5);
    }
    g
}

fn random_ray(rng: &mut impl Rng) -> Ray {
    let origin = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let target = Vec3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
    Ray::towards(origin, target - origin)
}

#[test]
fn homogeneous_medium_matches_beer_lambert() {
    let e = [1.0, 0.5, 0.25];
    // Unit box crossed along x: L = 1.
    let g = VoxelGrid::constant([4; 3], [0.0; 3], [1.0; 3], std::f64::consts::LN_2, e).unwrap();
    let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x(), 0.0, 10.0).unwrap();
    let r = render_hdr(&g, &ray, 0.01, &ExposureStats::neutral(0.01), 256);
    for (got, ec) in r.hdr.iter().zip(e) {
        let want = 0.5 * ec;
        assert!((got - want).abs() <= 0.01 * want, "{:?}", r.hdr);
    }
    assert!((r.transmittance_final - 0.5).abs() < 1e-9);
    for sigma in [0.1, 1.0, 3.0] {
        let g = VoxelGrid::constant([3; 3], [0.0; 3], [1.0; 3], sigma, [1.0; 3]).unwrap();
        let r = render_hdr(&g, &ray, 0.01, &ExposureStats::neutral(0.01), 256);
        assert!((r.hdr[0] - (1.0 - (-sigma).exp())).abs() < 0.01 * (1.0 - (-sigma).exp()));
    }
}

/// Density `s * x * y` is reproduced exactly by trilinear interpolation, and
/// along the diagonal it is quadratic in t, so midpoint quadrature has a
/// nonzero error that must shrink as K doubles.
#[test]
fn quadrature_error_shrinks_with_samples() {
    let s = 4.0;
    let g = VoxelGrid::from_fn([2; 3], [0.0; 3], [1.0; 3], |p| (s * p.x * p.y, [1.0; 3])).unwrap();
    let act = g.activate();
    // softplus_inv round trip is not exact; the oracle uses the activated corners.
    let c = act.sigma[3];
    let ray = Ray::new(Vec3::new(0.0, 0.0, 0.5), Vec3::new(1.0, 1.0, 0.0).normalize(), 0.0, 10.0).unwrap();
    // x = y = t / sqrt 2 over t in [0, sqrt 2]: integral of c * t^2 / 2.
    let optical_depth = c * 2f64.sqrt().powi(3) / 6.0;
    let exact = 1.0 - (-optical_depth).exp();
    let err = |k: usize| (act.render(&ray, 1.0, k).hdr[0] - exact).abs();
    let ks = [8, 16, 32, 64, 128, 256];
    for w in ks.windows(2) {
        let (a, b) = (err(w[0]), err(w[1]));
        assert!(b < a, "K={} err {a:e}, K={} err {b:e}", w[0], w[1]);
        assert!((a / b).log2() >= 1.0, "observed order {}", (a / b).log2());
    }
}

#[test]
fn partition_of_unity_on_ten_thousand_rays() {
    let g = random_grid(8, 1);
    let act = g.activate();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let r = act.render(&random_ray(&mut rng), 1.0, 64);
        let total: f64 = r.weights.iter().sum::<f64>() + r.transmittance_final;
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn exposure_rescales_without_changing_weights() {
    let g = random_grid(6, 3);
    let stats = ExposureStats::new(0.01, 0.004, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let ray = random_ray(&mut rng);
        let a = render_hdr(&g, &ray, 0.006, &stats, 64);
        let b = render_hdr(&g, &ray, 0.018, &stats, 64);
        assert_eq!(a.weights, b.weights);
        let (fa, fb) = (exposure_factor(0.006, &stats), exposure_factor(0.018, &stats));
        for c in 0..3 {
            assert!((a.hdr[c] / fa - b.hdr[c] / fb).abs() <= 1e-12 * (1.0 + a.hdr[c].abs()));
        }
    }
}

#[test]
fn oetf_is_continuous_at_the_knee_and_monotone() {
    let lin = 12.92 * SRGB_KNEE;
    let pow = 1.055 * SRGB_KNEE.powf(1.0 / 2.4) - 0.055;
    assert!((lin - pow).abs() < 1e-4);
    assert!((oetf_channel(0.18) - 0.4613).abs() < 1e-4);
    let mut prev = -1.0;
    for i in 0..=10_000 {
        let y = oetf_channel(i as f64 / 5000.0);
        assert!(y >= prev);
        prev = y;
    }
}

fn batch(seed: u64, n: usize, stats: &ExposureStats) -> Vec<RayTarget> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| RayTarget {
            ray: random_ray(&mut rng),
            target: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            exposure: stats.mu * rng.random_range(0.5..2.0),
        })
        .collect()
}

/// Relative error of the analytic gradient against central differences on
/// `count` random parameters the batch touches.
fn gradient_check(grid: &VoxelGrid, rays: &[RayTarget], stats: &ExposureStats, count: usize, seed: u64) -> f64 {
    let g = loss_gradients(grid, rays, stats, DEFAULT_SAMPLES, Exec::Sequential);
    let analytic: Vec<f64> = g.density.iter().chain(&g.emission).copied().collect();
    let touched: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i].abs() > 1e-10).collect();
    assert!(touched.len() >= count, "only {} parameters touched", touched.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.density.len();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let i = touched[rng.random_range(0..touched.len())];
        let eval = |delta: f64| {
            let mut p = grid.clone();
            if i < n {
                p.density[i] += delta;
            } else {
                p.emission[i - n] += delta;
            }
            photometric_loss(&p, rays, stats, DEFAULT_SAMPLES, Exec::Sequential)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs());
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let grid = random_grid(8, 10);
    let stats = ExposureStats::new(0.01, 0.004, 0.5).unwrap();
    let rays = batch(11, 16, &stats);
    let worst = gradient_check(&grid, &rays, &stats, 100, 12);
    assert!(worst < 1e-3, "worst relative error {worst:e}");
    let doubled = ExposureStats { epsilon: 1.0, ..stats };
    let worst = gradient_check(&grid, &rays, &doubled, 100, 13);
    assert!(worst < 1e-3, "worst relative error with doubled epsilon {worst:e}");
}

#[test]
fn zero_loss_batch_has_zero_gradient() {
    let grid = random_grid(6, 20);
    let stats = ExposureStats::new(0.01, 0.004, 0.5).unwrap();
    let mut rays = batch(21, 32, &stats);
    for rt in &mut rays {
        rt.target = oetf(render_hdr(&grid, &rt.ray, rt.exposure, &stats, DEFAULT_SAMPLES).hdr);
    }
    let g = loss_gradients(&grid, &rays, &stats, DEFAULT_SAMPLES, Exec::Sequential);
    assert_eq!(g.loss, 0.0);
    assert!(g.density.iter().chain(&g.emission).all(|&v| v == 0.0));
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let grid = random_grid(8, 30);
    let stats = ExposureStats::new(0.01, 0.004, 0.5).unwrap();
    let rays = batch(31, 1000, &stats);
    let a = loss_gradients(&grid, &rays, &stats, 32, Exec::Sequential);
    let b = loss_gradients(&grid, &rays, &stats, 32, Exec::default());
    assert_eq!(a, b);
    let cam = ring_camera(0.3, 0.2, 0.01, 24);
    let ia = render_image(&grid, &cam, &stats, 32, Exec::Sequential);
    let ib = render_image(&grid, &cam, &stats, 32, Exec::default());
    assert_eq!(ia, ib);
}

#[test]
fn short_training_run_reduces_loss_and_is_deterministic() {
    let truth = blob_grid(8);
    let exposures = [0.005, 0.01, 0.02];
    let stats = ExposureStats::from_exposures(&exposures, DEFAULT_EPSILON).unwrap();
    let views = ring_views(&truth, 6, &exposures, &stats, 12, Exec::default());
    let config = TrainConfig { resolution: [8; 3], steps: 40, batch_size: 256, samples: 32, ..Default::default() };
    let a = train(&views, &config).unwrap();
    let b = train(&views, &config).unwrap();
    assert_eq!(a.grid, b.grid);
    assert_eq!(a.losses, b.losses);
    let first = a.losses[..5].iter().sum::<f64>();
    let last = a.losses[a.losses.len() - 5..].iter().sum::<f64>();
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(matches!(train(&views[..1], &config), Err(FieldError::TooFewViews(1))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transmittance_is_monotone(seed in any::<u64>()) {
        let g = random_grid(5, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let r = g.activate().render(&random_ray(&mut rng), 1.0, 48);
        let mut t = 1.0;
        for w in &r.weights {
            prop_assert!(*w >= 0.0);
            let next = t - w;
            prop_assert!(next <= t + 1e-15 && next >= -1e-12);
            t = next;
        }
        prop_assert!((t - r.transmittance_final).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.transmittance_final));
    }

    #[test]
    fn activated_values_are_nonnegative(seed in any::<u64>()) {
        let mut g = random_grid(3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in g.density.iter_mut().chain(g.emission.iter_mut()) {
            *p = rng.random_range(-60.0..60.0);
        }
        let a = g.activate();
        prop_assert!(a.sigma.iter().all(|&s| s >= 0.0));
        prop_assert!(a.emission.iter().flatten().all(|&e| e >= 0.0));
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), n in 2usize..6) {
        let g = random_grid(n, seed);
        prop_assert_eq!(VoxelGrid::from_bytes(&g.to_bytes()).unwrap(), g);
    }
}
