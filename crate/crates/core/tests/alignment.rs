use drivesim_core::align::{align_all, align_pose, scale_factor, AlignmentFrame, PoseFileRecord, Space};
use drivesim_core::scene::{is_rotation, Pose};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)));
    *Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1)).matrix()
}

fn random_vec(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

/// Camera and trigger index with the true V-space pose.
type Truth = ((u32, u32), Pose);

/// Rig of `cameras` moved along `triggers` vehicle poses in V, plus the same
/// poses under a random similarity transform as M. Also returns the scale.
fn similarity_trial(seed: u64, cameras: u32, triggers: u32) -> (AlignmentFrame, Vec<Truth>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extrinsics: Vec<Pose> = (0..cameras).map(|_| Pose::new(random_rotation(&mut rng), random_vec(&mut rng, 2.0)).unwrap()).collect();
    let q = random_rotation(&mut rng);
    let s = rng.random_range(0.05..20.0);
    let b = random_vec(&mut rng, 100.0);
    let mut vehicle = Pose::planar(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0, rng.random_range(-3.0..3.0));
    let mut truth = Vec::new();
    let mut records = Vec::new();
    for t in 0..triggers {
        for (i, e) in extrinsics.iter().enumerate() {
            let v = vehicle.compose(e);
            let m = Pose::new(q * v.rotation(), s * (q * v.translation()) + b).unwrap();
            records.push(PoseFileRecord::new(i as u32, t, &m, Space::M));
            if i == 0 && t < 2 {
                records.push(PoseFileRecord::new(0, t, &v, Space::V));
            }
            truth.push(((i as u32, t), v));
        }
        let step = Pose::planar(rng.random_range(0.5..3.0), rng.random_range(-0.3..0.3), 0.0, rng.random_range(-0.2..0.2));
        vehicle = vehicle.compose(&step);
    }
    (AlignmentFrame::from_records(&records).unwrap(), truth, s)
}

fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    ((a.rotation() - b.rotation()).norm(), (a.translation() - b.translation()).norm())
}

#[test]
fn hundred_similarity_trials_recover_poses() {
    for seed in 0..100 {
        let (frame, truth, _) = similarity_trial(seed, 3, 4);
        for ((i, t), want) in &truth {
            let got = align_pose(&frame, *i, *t).unwrap();
            let (dr, dt) = pose_error(&got, want);
            assert!(dr < 1e-9 && dt < 1e-9, "seed {seed} camera {i} trigger {t}: {dr:e} {dt:e}");
        }
        assert_eq!(align_pose(&frame, 0, 0).unwrap(), frame.anchor_v);
        let second = align_pose(&frame, 0, 1).unwrap();
        assert!((second.translation() - frame.anchor2_v.translation()).norm() < 1e-9);
    }
}

#[test]
fn scale_matches_the_similarity() {
    for seed in 0..10 {
        let (frame, _, s) = similarity_trial(seed, 2, 2);
        assert!((scale_factor(&frame).unwrap() / s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pose_file_round_trips_through_json() {
    let (frame, _, _) = similarity_trial(9, 2, 3);
    let aligned = align_all(&frame).unwrap();
    assert_eq!(aligned.len(), 6);
    let text = serde_json::to_string(&aligned).unwrap();
    let back: Vec<PoseFileRecord> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, aligned);
    assert!(aligned.iter().all(|r| r.space == Space::V));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recovery_and_orthonormality(seed in any::<u64>(), cameras in 1u32..5, triggers in 2u32..6) {
        let (frame, truth, _) = similarity_trial(seed, cameras, triggers);
        for ((i, t), want) in &truth {
            let got = align_pose(&frame, *i, *t).unwrap();
            let (dr, dt) = pose_error(&got, want);
            prop_assert!(dr < 1e-9 && dt < 1e-9);
            prop_assert!(is_rotation(got.rotation()));
        }
        prop_assert_eq!(align_pose(&frame, 0, 0).unwrap(), frame.anchor_v.clone());
    }
}
