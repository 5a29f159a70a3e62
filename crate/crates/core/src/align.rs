//! Maps recalibrated multi-camera poses from a unified reconstruction space
//! (M) back into the vehicle's global space (V), using camera 0 at triggers 0
//! and 1 as anchors and a scalar scale from their displacement.
//!
//! Poses are camera-to-world.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("camera 0 does not move between triggers 0 and 1 in {0} space")]
    DegenerateMotion(Space),
    #[error("no {space} pose for camera {camera} at trigger {trigger}")]
    MissingPose { space: Space, camera: u32, trigger: u32 },
    #[error("pose record for camera {camera} at trigger {trigger} is not a rigid transform")]
    InvalidPose { camera: u32, trigger: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    M,
    V,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::M => "M",
            Space::V => "V",
        })
    }
}

/// One line of the pose file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFileRecord {
    pub camera_id: u32,
    pub trigger: u32,
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub space: Space,
}

impl PoseFileRecord {
    pub fn new(camera_id: u32, trigger: u32, pose: &Pose, space: Space) -> Self {
        let r = pose.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let t = pose.translation();
        PoseFileRecord { camera_id, trigger, rotation, translation: [t.x, t.y, t.z], space }
    }

    pub fn pose(&self) -> Result<Pose, AlignError> {
        Pose::new(Matrix3::from_row_slice(&self.rotation), Vector3::from(self.translation))
            .map_err(|_| AlignError::InvalidPose { camera: self.camera_id, trigger: self.trigger })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentFrame {
    pub poses_m: BTreeMap<(u32, u32), Pose>,
    /// Camera 0, trigger 0, in V.
    pub anchor_v: Pose,
    /// Camera 0, trigger 1, in V.
    pub anchor2_v: Pose,
}

impl AlignmentFrame {
    pub fn from_records(records: &[PoseFileRecord]) -> Result<Self, AlignError> {
        let mut poses_m = BTreeMap::new();
        let mut poses_v = BTreeMap::new();
        for r in records {
            let target = if r.space == Space::M { &mut poses_m } else { &mut poses_v };
            target.insert((r.camera_id, r.trigger), r.pose()?);
        }
        let take = |t: u32| {
            poses_v.get(&(0, t)).cloned().ok_or(AlignError::MissingPose { space: Space::V, camera: 0, trigger: t })
        };
        Ok(AlignmentFrame { anchor_v: take(0)?, anchor2_v: take(1)?, poses_m })
    }

    fn m(&self, camera: u32, trigger: u32) -> Result<&Pose, AlignError> {
        self.poses_m.get(&(camera, trigger)).ok_or(AlignError::MissingPose { space: Space::M, camera, trigger })
    }
}

/// Ratio of camera 0's trigger 0 to 1 displacement in M to the same in V.
pub fn scale_factor(frame: &AlignmentFrame) -> Result<f64, AlignError> {
    let dm = (frame.m(0, 1)?.translation() - frame.m(0, 0)?.translation()).norm();
    let dv = (frame.anchor2_v.translation() - frame.anchor_v.translation()).norm();
    if dm == 0.0 {
        return Err(AlignError::DegenerateMotion(Space::M));
    }
    if dv == 0.0 {
        return Err(AlignError::DegenerateMotion(Space::V));
    }
    Ok(dm / dv)
}

/// Pose of camera `i` at trigger `t` in V space.
pub fn align_pose(frame: &AlignmentFrame, i: u32, t: u32) -> Result<Pose, AlignError> {
    let s = scale_factor(frame)?;
    let anchor_m = frame.m(0, 0)?;
    let pose_m = frame.m(i, t)?;
    let r0v = frame.anchor_v.rotation();
    let to_v = r0v * anchor_m.rotation().transpose();
    // R0M^T R0M is the identity only up to rounding; keep the anchor exact.
    let rotation = if pose_m.rotation() == anchor_m.rotation() { *r0v } else { to_v * pose_m.rotation() };
    let translation = to_v * (pose_m.translation() - anchor_m.translation()) / s + frame.anchor_v.translation();
    Pose::new(rotation, translation).map_err(|_| AlignError::InvalidPose { camera: i, trigger: t })
}

/// Every M pose mapped into V, as pose-file records.
pub fn align_all(frame: &AlignmentFrame) -> Result<Vec<PoseFileRecord>, AlignError> {
    frame
        .poses_m
        .keys()
        .map(|&(i, t)| Ok(PoseFileRecord::new(i, t, &align_pose(frame, i, t)?, Space::V)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn pose(yaw: f64, t: [f64; 3]) -> Pose {
        Pose::new(*Rotation3::from_euler_angles(0.1, -0.2, yaw).matrix(), Vector3::from(t)).unwrap()
    }

    fn frame_with(m: Vec<((u32, u32), Pose)>, v0: Pose, v1: Pose) -> AlignmentFrame {
        AlignmentFrame { poses_m: m.into_iter().collect(), anchor_v: v0, anchor2_v: v1 }
    }

    #[test]
    fn identity_spaces_scale_one() {
        let (p0, p1) = (pose(0.3, [1.0, 2.0, 0.5]), pose(0.35, [4.0, 6.0, 0.5]));
        let f = frame_with(vec![((0, 0), p0.clone()), ((0, 1), p1.clone())], p0, p1);
        assert_eq!(scale_factor(&f).unwrap(), 1.0);
    }

    /// V displacement (3, 4, 0) has norm 5; M displacement (6, 8, 0) norm 10.
    #[test]
    fn doubled_displacement_scale_two() {
        let f = frame_with(
            vec![((0, 0), pose(0.0, [1.0, 1.0, 1.0])), ((0, 1), pose(0.0, [7.0, 9.0, 1.0]))],
            pose(0.0, [0.0, 0.0, 0.0]),
            pose(0.0, [3.0, 4.0, 0.0]),
        );
        assert_eq!(scale_factor(&f).unwrap(), 2.0);
    }

    #[test]
    fn stationary_is_degenerate() {
        let p = pose(0.0, [1.0, 1.0, 1.0]);
        let f = frame_with(vec![((0, 0), p.clone()), ((0, 1), p.clone())], p.clone(), pose(0.0, [2.0, 1.0, 1.0]));
        assert_eq!(scale_factor(&f), Err(AlignError::DegenerateMotion(Space::M)));
        let f = frame_with(vec![((0, 0), p.clone()), ((0, 1), pose(0.0, [2.0, 1.0, 1.0]))], p.clone(), p);
        assert_eq!(scale_factor(&f), Err(AlignError::DegenerateMotion(Space::V)));
    }

    #[test]
    fn anchor_is_exact_fixpoint() {
        let f = frame_with(
            vec![((0, 0), pose(1.1, [5.0, -3.0, 2.0])), ((0, 1), pose(1.2, [9.0, -1.0, 2.0]))],
            pose(0.4, [100.0, 50.0, 1.5]),
            pose(0.45, [101.0, 50.5, 1.5]),
        );
        assert_eq!(align_pose(&f, 0, 0).unwrap(), f.anchor_v);
    }

    #[test]
    fn missing_pose_reported() {
        let f = frame_with(
            vec![((0, 0), pose(0.0, [0.0; 3])), ((0, 1), pose(0.0, [1.0, 0.0, 0.0]))],
            pose(0.0, [0.0; 3]),
            pose(0.0, [1.0, 0.0, 0.0]),
        );
        assert_eq!(align_pose(&f, 3, 0), Err(AlignError::MissingPose { space: Space::M, camera: 3, trigger: 0 }));
    }

    #[test]
    fn records_round_trip() {
        let p = pose(0.7, [1.0, 2.0, 3.0]);
        let r = PoseFileRecord::new(2, 5, &p, Space::M);
        let back = r.pose().unwrap();
        assert!((back.rotation() - p.rotation()).norm() == 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"space\":\"M\""));
    }
}
