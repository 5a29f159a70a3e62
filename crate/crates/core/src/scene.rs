//! Scene data model shared by every agent: lane maps, poses, cameras, the
//! asset bank, vehicle instances and the append-only edit log.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::motion::{MovementAttributes, Trajectory};
use crate::orchestrator::{Instruction, StructuredConfig};

pub type Point2 = Vector2<f64>;
pub type Rgb = [f64; 3];

/// Largest per-channel difference for two colors to count as the same.
pub const COLOR_MATCH_TOL: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("lane node is degenerate or non-finite: {0}")]
    InvalidLaneNode(String),
    #[error("rotation is not orthonormal with unit determinant")]
    InvalidPose,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid asset {id}: {reason}")]
    InvalidAsset { id: String, reason: String },
    #[error("no asset matches the requested attributes")]
    NoMatch,
    #[error("asset bank is empty")]
    EmptyBank,
    #[error("unknown asset id {0}")]
    UnknownAsset(String),
}

// ---------------------------------------------------------------------------
// Lane map

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Centerline,
    Boundary,
    Other,
}

/// A directed lane segment. Vehicles drive from `start` toward `end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LaneNodeRecord", into = "LaneNodeRecord")]
pub struct LaneNode {
    start: Point2,
    end: Point2,
    lane_type: LaneType,
}

/// On-disk form of a lane node: `{x_s, y_s, x_e, y_e, type}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaneNodeRecord {
    pub x_s: f64,
    pub y_s: f64,
    pub x_e: f64,
    pub y_e: f64,
    #[serde(rename = "type")]
    pub lane_type: LaneType,
}

impl TryFrom<LaneNodeRecord> for LaneNode {
    type Error = SceneError;
    fn try_from(r: LaneNodeRecord) -> Result<Self, SceneError> {
        LaneNode::new(Point2::new(r.x_s, r.y_s), Point2::new(r.x_e, r.y_e), r.lane_type)
    }
}

impl From<LaneNode> for LaneNodeRecord {
    fn from(n: LaneNode) -> Self {
        LaneNodeRecord {
            x_s: n.start.x,
            y_s: n.start.y,
            x_e: n.end.x,
            y_e: n.end.y,
            lane_type: n.lane_type,
        }
    }
}

impl LaneNode {
    pub fn new(start: Point2, end: Point2, lane_type: LaneType) -> Result<Self, SceneError> {
        let finite = start.iter().chain(end.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(SceneError::InvalidLaneNode(format!("{start:?} -> {end:?}")));
        }
        if start == end {
            return Err(SceneError::InvalidLaneNode(format!("zero length at {start:?}")));
        }
        Ok(LaneNode { start, end, lane_type })
    }

    pub fn centerline(start: Point2, end: Point2) -> Result<Self, SceneError> {
        Self::new(start, end, LaneType::Centerline)
    }

    pub fn start(&self) -> Point2 {
        self.start
    }

    pub fn end(&self) -> Point2 {
        self.end
    }

    pub fn lane_type(&self) -> LaneType {
        self.lane_type
    }

    pub fn midpoint(&self) -> Point2 {
        (self.start + self.end) * 0.5
    }

    /// Unit driving direction.
    pub fn direction(&self) -> Point2 {
        (self.end - self.start).normalize()
    }

    pub fn heading(&self) -> f64 {
        let d = self.end - self.start;
        d.y.atan2(d.x)
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// Same segment driven the other way.
    pub fn reversed(&self) -> LaneNode {
        LaneNode { start: self.end, end: self.start, lane_type: self.lane_type }
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to(&self, p: &Point2) -> f64 {
        let d = self.end - self.start;
        let t = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        (self.start + d * t - p).norm()
    }
}

/// Crop window in the ego frame (x forward, y left), meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub front: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for CropRect {
    fn default() -> Self {
        CropRect { front: 80.0, left: 20.0, right: 20.0 }
    }
}

impl CropRect {
    pub fn contains(&self, local: &Point2) -> bool {
        local.x >= 0.0 && local.x <= self.front && local.y <= self.left && local.y >= -self.right
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneMap {
    pub nodes: Vec<LaneNode>,
    #[serde(default)]
    pub crop: CropRect,
}

impl LaneMap {
    pub fn new(nodes: Vec<LaneNode>) -> Self {
        LaneMap { nodes, crop: CropRect::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn centerlines(&self) -> impl Iterator<Item = &LaneNode> {
        self.nodes.iter().filter(|n| n.lane_type == LaneType::Centerline)
    }

    /// Every node driven the other way ("crazy mode" maps).
    pub fn reversed(&self) -> LaneMap {
        LaneMap { nodes: self.nodes.iter().map(LaneNode::reversed).collect(), crop: self.crop }
    }

    /// Distance from `p` to the nearest centerline segment, `+inf` if none.
    pub fn distance_to_centerline(&self, p: &Point2) -> f64 {
        self.centerlines().map(|n| n.distance_to(p)).fold(f64::INFINITY, f64::min)
    }

    /// Parses the `[{x_s, y_s, x_e, y_e, type}, ...]` file format.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let nodes: Vec<LaneNode> = serde_json::from_str(text)?;
        Ok(LaneMap::new(nodes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.nodes).expect("lane nodes serialize")
    }
}

/// Keeps the nodes whose midpoint, expressed in the ego frame, falls inside
/// the map's crop rectangle.
pub fn crop_lane_map(map: &LaneMap, ego_pose: &Pose) -> LaneMap {
    let nodes = map
        .nodes
        .iter()
        .filter(|n| {
            let m = n.midpoint();
            let local = ego_pose.inverse_transform_point(&Vector3::new(m.x, m.y, 0.0));
            map.crop.contains(&Point2::new(local.x, local.y))
        })
        .cloned()
        .collect();
    LaneMap { nodes, crop: map.crop }
}

// ---------------------------------------------------------------------------
// Poses and cameras

/// Rigid transform from a local frame into the world: `world = R * local + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major 3x3.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TryFrom<PoseRecord> for Pose {
    type Error = SceneError;
    fn try_from(r: PoseRecord) -> Result<Self, SceneError> {
        Pose::new(Matrix3::from_row_slice(&r.rotation), Vector3::from(r.translation))
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        PoseRecord {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, SceneError> {
        if !translation.iter().all(|v| v.is_finite()) || !is_rotation(&rotation) {
            return Err(SceneError::InvalidPose);
        }
        Ok(Pose { rotation, translation })
    }

    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Pose on the ground plane: position `(x, y, z)` and yaw about +z.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Pose { rotation, translation: Vector3::new(x, y, z) }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Heading of the local +x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn position2(&self) -> Point2 {
        Point2::new(self.translation.x, self.translation.y)
    }
}

/// `RᵀR = I` and `det R = 1` within [`Pose::ORTHONORMAL_TOL`].
pub fn is_rotation(r: &Matrix3<f64>) -> bool {
    if !r.iter().all(|v| v.is_finite()) {
        return false;
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= Pose::ORTHONORMAL_TOL && (r.determinant() - 1.0).abs() <= Pose::ORTHONORMAL_TOL
}

/// Pinhole camera. The camera frame is x right, y down, z forward; `pose`
/// maps camera coordinates into the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Seconds.
    pub exposure_time: f64,
    pub pose: Pose,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.exposure_time > 0.0) {
            return Err(SceneError::InvalidCamera("exposure_time must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidCamera("empty image".into()));
        }
        Ok(())
    }

    /// Camera looking along world direction `forward` from `eye`, with world +z up.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        width: u32,
        height: u32,
        fov_x_deg: f64,
        exposure_time: f64,
    ) -> Self {
        let z = (target - eye).normalize();
        let up = Vector3::z();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            x = Vector3::x();
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        CameraModel {
            fx,
            fy: fx,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
            exposure_time,
            pose: Pose { rotation, translation: eye },
        }
    }

    /// World-space unit direction through the center of pixel `(u, v)`.
    pub fn pixel_direction(&self, u: u32, v: u32) -> Vector3<f64> {
        self.pose.rotation() * self.camera_direction(u, v)
    }

    /// Camera-frame unit direction through the center of pixel `(u, v)`.
    pub fn camera_direction(&self, u: u32, v: u32) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    pub fn center(&self) -> Vector3<f64> {
        *self.pose.translation()
    }

    /// Same intrinsics, different pose.
    pub fn with_pose(&self, pose: Pose) -> Self {
        CameraModel { pose, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// Asset bank

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub id: String,
    pub type_label: String,
    #[serde(default)]
    pub brand_tags: Vec<String>,
    pub color: Rgb,
    /// `(length, width, height)` in meters.
    pub dimensions: [f64; 3],
    pub origin_at_bottom_center: bool,
    pub faces_plus_x: bool,
}

impl AssetRecord {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: &str| SceneError::InvalidAsset { id: self.id.clone(), reason: reason.into() };
        if self.dimensions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(bad("dimensions must be positive"));
        }
        if !color_in_range(&self.color) {
            return Err(bad("color outside [0,1]"));
        }
        if !(self.origin_at_bottom_center && self.faces_plus_x) {
            return Err(bad("asset is not normalized (origin at bottom center, facing +x)"));
        }
        Ok(())
    }

    pub fn has_brand(&self, brand: &str) -> bool {
        self.brand_tags.iter().any(|b| b.eq_ignore_ascii_case(brand))
    }

    pub fn is_type(&self, type_label: &str) -> bool {
        self.type_label.eq_ignore_ascii_case(type_label)
    }
}

pub fn color_in_range(c: &Rgb) -> bool {
    c.iter().all(|v| (0.0..=1.0).contains(v))
}

pub fn colors_match(a: &Rgb, b: &Rgb) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= COLOR_MATCH_TOL)
}

/// Parses an asset catalog file (JSON array of records) and validates it.
pub fn load_asset_catalog(text: &str) -> Result<Vec<AssetRecord>, String> {
    let bank: Vec<AssetRecord> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    for a in &bank {
        a.validate().map_err(|e| e.to_string())?;
    }
    Ok(bank)
}

/// Requested asset attributes. Empty means "anything".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetQuery {
    #[serde(rename = "type", default)]
    pub type_label: Option<String>,
    #[serde(default)]
    pub brand: Option<String>,
    #[serde(default)]
    pub color: Option<Rgb>,
}

impl AssetQuery {
    pub fn is_empty(&self) -> bool {
        self.type_label.is_none() && self.brand.is_none() && self.color.is_none()
    }

    /// Type and brand are worth 2 points each, a color within tolerance 1.
    pub fn score(&self, asset: &AssetRecord) -> u32 {
        let mut score = 0;
        if self.type_label.as_deref().is_some_and(|t| asset.is_type(t)) {
            score += 2;
        }
        if self.brand.as_deref().is_some_and(|b| asset.has_brand(b)) {
            score += 2;
        }
        if self.color.as_ref().is_some_and(|c| colors_match(c, &asset.color)) {
            score += 1;
        }
        score
    }
}

/// Highest scoring asset; ties go to the lexicographically smallest id.
pub fn select_asset<'a>(bank: &'a [AssetRecord], query: &AssetQuery) -> Result<&'a AssetRecord, SceneError> {
    let best = bank
        .iter()
        .map(|a| (query.score(a), a))
        .max_by(|(sa, a), (sb, b)| sa.cmp(sb).then_with(|| b.id.cmp(&a.id)))
        .ok_or(SceneError::EmptyBank)?;
    if best.0 == 0 && !query.is_empty() {
        return Err(SceneError::NoMatch);
    }
    Ok(best.1)
}

pub fn recolor_asset(asset: &AssetRecord, color: Rgb) -> Result<AssetRecord, SceneError> {
    if !color_in_range(&color) {
        return Err(SceneError::OutOfRange(format!("color {color:?} outside [0,1]")));
    }
    Ok(AssetRecord { color, ..asset.clone() })
}

// ---------------------------------------------------------------------------
// Scene graph

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleInstance {
    pub instance_id: String,
    pub asset_id: String,
    pub color_override: Option<Rgb>,
    pub trajectory: Trajectory,
    pub created_in_round: u64,
    /// Monotone creation counter; orders instances created in the same round.
    pub seq: u64,
    pub crazy_mode: bool,
    pub movement: MovementAttributes,
}

/// Annotation for a vehicle that is part of the captured background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundVehicle {
    pub id: String,
    pub type_label: String,
    pub color: Rgb,
    pub center: [f64; 3],
    pub dimensions: [f64; 3],
    pub heading: f64,
}

/// Accumulated view adjustments, in the ego frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub delta_position: [f64; 3],
    /// Degrees: roll, pitch, yaw about ego x, y, z.
    pub delta_angles: [f64; 3],
    /// Ego forward speed (m/s) applied over frames.
    pub ego_speed: f64,
}

/// Skydome description used for lighting the inserted vehicles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkySpec {
    pub sun_direction: [f64; 3],
    pub sun_intensity: Rgb,
    pub sky_color: Rgb,
}

impl Default for SkySpec {
    fn default() -> Self {
        SkySpec {
            sun_direction: [0.4, 0.2, 0.894_427_190_999_915_9],
            sun_intensity: [40.0, 38.0, 34.0],
            sky_color: [0.35, 0.45, 0.6],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditEntry {
    pub round: u64,
    pub instruction: Instruction,
    pub config: StructuredConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub field_ref: String,
    pub lane_map: LaneMap,
    pub ego: Pose,
    pub rig: Vec<CameraModel>,
    pub asset_bank: Vec<AssetRecord>,
    #[serde(default)]
    pub background_vehicles: Vec<BackgroundVehicle>,
    pub vehicles: BTreeMap<String, VehicleInstance>,
    pub deleted_background_ids: BTreeSet<String>,
    #[serde(default)]
    pub view: ViewState,
    #[serde(default)]
    pub sky: SkySpec,
    pub seed: u64,
    /// Last executed round, 0 before the first command.
    pub round: u64,
    pub next_vehicle_seq: u64,
    edit_log: Vec<EditEntry>,
}

impl SceneGraph {
    pub fn new(field_ref: impl Into<String>, lane_map: LaneMap, ego: Pose, rig: Vec<CameraModel>, asset_bank: Vec<AssetRecord>) -> Self {
        SceneGraph {
            field_ref: field_ref.into(),
            lane_map,
            ego,
            rig,
            asset_bank,
            background_vehicles: Vec::new(),
            vehicles: BTreeMap::new(),
            deleted_background_ids: BTreeSet::new(),
            view: ViewState::default(),
            sky: SkySpec::default(),
            seed: 0,
            round: 0,
            next_vehicle_seq: 0,
            edit_log: Vec::new(),
        }
    }

    pub fn edit_log(&self) -> &[EditEntry] {
        &self.edit_log
    }

    /// Appends to the log. Rounds must be non-decreasing.
    pub fn record(&mut self, entry: EditEntry) {
        if let Some(last) = self.edit_log.last() {
            assert!(entry.round >= last.round, "edit log rounds must be non-decreasing");
        }
        self.edit_log.push(entry);
    }

    pub fn asset(&self, id: &str) -> Result<&AssetRecord, SceneError> {
        self.asset_bank.iter().find(|a| a.id == id).ok_or_else(|| SceneError::UnknownAsset(id.into()))
    }

    /// Background vehicles that have not been deleted.
    pub fn visible_background(&self) -> impl Iterator<Item = &BackgroundVehicle> {
        self.background_vehicles.iter().filter(|b| !self.deleted_background_ids.contains(&b.id))
    }

    /// Vehicles in creation order.
    pub fn vehicles_by_seq(&self) -> Vec<&VehicleInstance> {
        let mut v: Vec<_> = self.vehicles.values().collect();
        v.sort_by_key(|v| v.seq);
        v
    }

    /// Number of frames spanned by the longest vehicle trajectory (at least 1).
    pub fn horizon(&self) -> usize {
        self.vehicles.values().map(|v| v.trajectory.samples.len()).max().unwrap_or(1).max(1)
    }

    /// Ego pose at frame `k`, including view adjustments and ego motion.
    pub fn view_pose(&self, frame: usize, sample_rate: f64) -> Pose {
        let v = &self.view;
        let advance = v.ego_speed * frame as f64 / sample_rate;
        let [roll, pitch, yaw] = v.delta_angles.map(f64::to_radians);
        let rotation = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
        let delta = Pose {
            rotation,
            translation: Vector3::new(v.delta_position[0] + advance, v.delta_position[1], v.delta_position[2]),
        };
        self.ego.compose(&delta)
    }

    /// Canonical JSON: struct fields in declaration order, maps sorted by key.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}
