//! Text-attribute driven vehicle placement and trajectory planning on a lane
//! map: sector placement, per-action destination choice, cubic Bezier chains
//! with iterative off-road correction, and arc-length resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{LaneMap, LaneNode, Point2, Pose};

/// Minimum center distance between placed vehicles (and existing ones).
pub const MIN_SPACING: f64 = 6.0;
/// Turn destinations must sit this far (meters) from the initial heading line.
pub const TURN_LATERAL_RANGE: (f64, f64) = (5.0, 30.0);

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("no lane node satisfies the constraints: {0}")]
    NoCandidate(String),
    #[error("degenerate Bezier input: start and end coincide")]
    DegenerateInput,
    #[error("lane map is empty")]
    EmptyMap,
    #[error("invalid attributes: {0}")]
    InvalidAttributes(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Front,
    LeftFront,
    RightFront,
    Left,
    Right,
    Back,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingDirection {
    /// Driving toward the observer.
    Toward,
    /// Driving away from the observer.
    Away,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Straight,
    TurnLeft,
    TurnRight,
    Park,
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementAttributes {
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub distance_range: Option<(f64, f64)>,
    #[serde(default = "default_sector")]
    pub sector: Sector,
    /// `None`: follow the reference vehicle's heading when there is one,
    /// otherwise drive away from the observer.
    #[serde(default)]
    pub driving_direction: Option<DrivingDirection>,
    #[serde(default)]
    pub crazy_mode: bool,
}

fn one() -> u32 {
    1
}

fn default_sector() -> Sector {
    Sector::Front
}

impl Default for PlacementAttributes {
    fn default() -> Self {
        PlacementAttributes {
            count: 1,
            distance_range: None,
            sector: Sector::Front,
            driving_direction: None,
            crazy_mode: false,
        }
    }
}

impl PlacementAttributes {
    pub fn validate(&self) -> Result<(), MotionError> {
        if self.count == 0 {
            return Err(MotionError::InvalidAttributes("count must be positive".into()));
        }
        if let Some((lo, hi)) = self.distance_range {
            if !(lo >= 0.0 && lo < hi) {
                return Err(MotionError::InvalidAttributes(format!("distance range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

pub const SPEED_SLOW: f64 = 3.0;
pub const SPEED_NORMAL: f64 = 8.0;
pub const SPEED_FAST: f64 = 15.0;
/// Default trajectory sampling rate (Hz); also the render frame rate.
pub const FRAME_RATE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementAttributes {
    /// m/s.
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default = "default_action")]
    pub action: Action,
    /// Seconds.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Accepted for completeness; timing is driven by `sample_rate`.
    #[serde(default)]
    pub interval: Option<f64>,
    /// Hz.
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
}

fn default_speed() -> f64 {
    SPEED_NORMAL
}
fn default_action() -> Action {
    Action::Straight
}
fn default_duration() -> f64 {
    5.0
}
fn default_rate() -> f64 {
    FRAME_RATE
}

impl Default for MovementAttributes {
    fn default() -> Self {
        MovementAttributes {
            speed: default_speed(),
            action: default_action(),
            duration: default_duration(),
            interval: None,
            sample_rate: default_rate(),
        }
    }
}

impl MovementAttributes {
    pub fn validate(&self) -> Result<(), MotionError> {
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(MotionError::InvalidAttributes("speed must be >= 0".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(MotionError::InvalidAttributes("duration must be > 0".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(MotionError::InvalidAttributes("sample_rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.sample_rate + 1e-9).floor() as usize + 1
    }

    fn is_stationary(&self) -> bool {
        self.action == Action::Park || self.speed == 0.0
    }
}

/// Planar reference frame: position plus heading (radians from +x).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: Point2,
    pub heading: f64,
}

impl Anchor {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Anchor { position: Point2::new(x, y), heading }
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Anchor { position: pose.position2(), heading: pose.yaw() }
    }

    pub fn forward(&self) -> Point2 {
        Point2::new(self.heading.cos(), self.heading.sin())
    }

    /// `p` in the anchor frame: (longitudinal, lateral-left).
    pub fn to_local(&self, p: &Point2) -> Point2 {
        let d = p - self.position;
        let f = self.forward();
        Point2::new(d.dot(&f), f.x * d.y - f.y * d.x)
    }
}

/// Bearing-based sector: Front within ±15°, LeftFront (15°, 75°], Left
/// (75°, 120°], Back beyond ±120°, mirrored on the right.
pub fn classify_sector(anchor: &Anchor, point: &Point2) -> Sector {
    let local = anchor.to_local(point);
    let theta = local.y.atan2(local.x).to_degrees();
    let a = theta.abs();
    let left = theta > 0.0;
    if a <= 15.0 {
        Sector::Front
    } else if a <= 75.0 {
        if left { Sector::LeftFront } else { Sector::RightFront }
    } else if a <= 120.0 {
        if left { Sector::Left } else { Sector::Right }
    } else {
        Sector::Back
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position: Point2,
    pub heading: f64,
}

impl Placement {
    pub fn anchor(&self) -> Anchor {
        Anchor { position: self.position, heading: self.heading }
    }
}

/// Where placements are measured from.
#[derive(Clone, Debug)]
pub struct PlacementContext {
    /// Frame for sector and distance (the ego or a referenced vehicle).
    pub anchor: Anchor,
    /// Observer for toward/away (the ego).
    pub observer: Point2,
    /// Heading to follow when no explicit driving direction is given.
    pub follow_heading: Option<f64>,
    /// Positions already occupied.
    pub existing: Vec<Point2>,
}

impl PlacementContext {
    pub fn from_ego(ego: Anchor) -> Self {
        PlacementContext { anchor: ego, observer: ego.position, follow_heading: None, existing: vec![ego.position] }
    }
}

/// Checks every placement predicate except spacing for a (possibly
/// reversed) lane node.
pub fn node_matches(node: &LaneNode, attrs: &PlacementAttributes, ctx: &PlacementContext) -> bool {
    let mid = node.midpoint();
    if let Some((lo, hi)) = attrs.distance_range {
        let d = (mid - ctx.anchor.position).norm();
        if d < lo || d > hi {
            return false;
        }
    }
    if mid == ctx.anchor.position || classify_sector(&ctx.anchor, &mid) != attrs.sector {
        return false;
    }
    let dir = node.direction();
    match (attrs.driving_direction, ctx.follow_heading) {
        (Some(DrivingDirection::Toward), _) => dir.dot(&(ctx.observer - mid)) > 0.0,
        (Some(DrivingDirection::Away), _) => dir.dot(&(ctx.observer - mid)) < 0.0,
        (None, Some(h)) => dir.dot(&Point2::new(h.cos(), h.sin())) > 0.0,
        (None, None) => dir.dot(&(ctx.observer - mid)) < 0.0,
    }
}

/// Places `attrs.count` vehicles on lane-node midpoints. Candidates are the
/// centerline nodes (reversed in crazy mode) that satisfy distance, sector and
/// direction; each pick is uniform among those at least [`MIN_SPACING`] from
/// every earlier pick and existing vehicle.
pub fn place_vehicles<R: Rng>(
    map: &LaneMap,
    attrs: &PlacementAttributes,
    ctx: &PlacementContext,
    rng: &mut R,
) -> Result<Vec<Placement>, MotionError> {
    if map.is_empty() {
        return Err(MotionError::EmptyMap);
    }
    attrs.validate()?;
    let travel = if attrs.crazy_mode { map.reversed() } else { map.clone() };
    let candidates: Vec<&LaneNode> = travel.centerlines().filter(|n| node_matches(n, attrs, ctx)).collect();
    let mut occupied = ctx.existing.clone();
    let mut placed = Vec::with_capacity(attrs.count as usize);
    for k in 0..attrs.count {
        let free: Vec<&&LaneNode> = candidates
            .iter()
            .filter(|n| occupied.iter().all(|o| (n.midpoint() - o).norm() >= MIN_SPACING))
            .collect();
        if free.is_empty() {
            return Err(MotionError::NoCandidate(format!(
                "vehicle {} of {}: {} candidates before spacing",
                k + 1,
                attrs.count,
                candidates.len()
            )));
        }
        let node = free[rng.random_range(0..free.len())];
        let p = Placement { position: node.midpoint(), heading: node.heading() };
        occupied.push(p.position);
        placed.push(p);
    }
    Ok(placed)
}

fn nearest_node<'a>(nodes: impl Iterator<Item = &'a LaneNode>, p: &Point2) -> Option<&'a LaneNode> {
    nodes.min_by(|a, b| (a.midpoint() - p).norm().total_cmp(&(b.midpoint() - p).norm()))
}

/// Destination lane node for a vehicle at `start` facing `heading`.
///
/// Straight, park and backward project a raw destination along the heading
/// line and snap to the nearest node oriented with the vehicle. Turns pick
/// uniformly among nodes 5-30 m to the matching side of the heading line
/// that lie ahead and lead away from the start.
pub fn plan_destination<R: Rng>(
    start: Point2,
    heading: f64,
    m: &MovementAttributes,
    map: &LaneMap,
    rng: &mut R,
) -> Result<LaneNode, MotionError> {
    if map.is_empty() {
        return Err(MotionError::EmptyMap);
    }
    let fwd = Point2::new(heading.cos(), heading.sin());
    match m.action {
        Action::Straight | Action::Park | Action::Backward => {
            let reach = if m.action == Action::Park { 0.0 } else { m.speed * m.duration };
            let sign = if m.action == Action::Backward { -1.0 } else { 1.0 };
            let raw = start + fwd * (sign * reach);
            nearest_node(map.centerlines().filter(|n| n.direction().dot(&fwd) > 0.0), &raw)
                .cloned()
                .ok_or_else(|| MotionError::NoCandidate("no lane oriented with the vehicle".into()))
        }
        Action::TurnLeft | Action::TurnRight => {
            let side = if m.action == Action::TurnLeft { 1.0 } else { -1.0 };
            let (lo, hi) = TURN_LATERAL_RANGE;
            let candidates: Vec<&LaneNode> = map
                .centerlines()
                .filter(|n| {
                    let disp = n.midpoint() - start;
                    let lateral = side * (fwd.x * disp.y - fwd.y * disp.x);
                    (lo..=hi).contains(&lateral) && fwd.dot(&disp) > 0.0 && n.direction().dot(&disp) > 0.0
                })
                .collect();
            if candidates.is_empty() {
                return Err(MotionError::NoCandidate(format!("no {:?} branch", m.action)));
            }
            Ok(candidates[rng.random_range(0..candidates.len())].clone())
        }
    }
}

// ---------------------------------------------------------------------------
// Bezier chains

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicBezier {
    pub points: [Point2; 4],
}

impl CubicBezier {
    pub fn eval(&self, t: f64) -> Point2 {
        let [p0, p1, p2, p3] = &self.points;
        let s = 1.0 - t;
        p0 * (s * s * s) + p1 * (3.0 * t * s * s) + p2 * (3.0 * t * t * s) + p3 * (t * t * t)
    }

    pub fn derivative(&self, t: f64) -> Point2 {
        let [p0, p1, p2, p3] = &self.points;
        let s = 1.0 - t;
        (p1 - p0) * (3.0 * s * s) + (p2 - p1) * (6.0 * s * t) + (p3 - p2) * (3.0 * t * t)
    }

    pub fn start(&self) -> Point2 {
        self.points[0]
    }

    pub fn end(&self) -> Point2 {
        self.points[3]
    }
}

/// Hermite-style fit: interior control points sit a third of the chord along
/// the end tangents.
pub fn fit_cubic_bezier(p0: Point2, d0: Point2, p3: Point2, d3: Point2) -> Result<CubicBezier, MotionError> {
    let chord = (p3 - p0).norm();
    if chord == 0.0 {
        return Err(MotionError::DegenerateInput);
    }
    let h = chord / 3.0;
    Ok(CubicBezier { points: [p0, p0 + d0 * h, p3 - d3 * h, p3] })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjustParams {
    pub delta_road: f64,
    pub samples_per_curve: usize,
    pub max_depth: u32,
}

impl Default for AdjustParams {
    fn default() -> Self {
        AdjustParams { delta_road: 2.0, samples_per_curve: 50, max_depth: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustedChain {
    pub curves: Vec<CubicBezier>,
    /// False when some curve still leaves the road at the depth limit.
    pub converged: bool,
}

fn max_offroad(map: &LaneMap, curve: &CubicBezier, samples: usize) -> f64 {
    (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            map.distance_to_centerline(&curve.eval(t))
        })
        .fold(0.0, f64::max)
}

/// Recursively splits off-road curves at the lane node nearest their midpoint.
/// `map` must be oriented in the direction of travel.
pub fn adjust_trajectory(map: &LaneMap, chain: &[CubicBezier], params: AdjustParams) -> AdjustedChain {
    let mut curves = Vec::new();
    let mut converged = true;
    for c in chain {
        converged &= adjust_curve(map, c, params, 0, &mut curves);
    }
    AdjustedChain { curves, converged }
}

fn adjust_curve(map: &LaneMap, curve: &CubicBezier, params: AdjustParams, depth: u32, out: &mut Vec<CubicBezier>) -> bool {
    if max_offroad(map, curve, params.samples_per_curve.max(2)) <= params.delta_road {
        out.push(curve.clone());
        return true;
    }
    if depth >= params.max_depth {
        out.push(curve.clone());
        return false;
    }
    let (p0, p3) = (curve.start(), curve.end());
    let travel = p3 - p0;
    let mid = curve.eval(0.5);
    let split = nearest_node(
        map.centerlines().filter(|n| {
            let m = n.midpoint();
            n.direction().dot(&travel) > 0.0 && (m - p0).norm() > 1e-3 && (m - p3).norm() > 1e-3
        }),
        &mid,
    );
    let Some(split) = split else {
        out.push(curve.clone());
        return false;
    };
    let d0 = curve.derivative(0.0).normalize();
    let d3 = curve.derivative(1.0).normalize();
    let (m, dm) = (split.midpoint(), split.direction());
    let (Ok(first), Ok(second)) = (fit_cubic_bezier(p0, d0, m, dm), fit_cubic_bezier(m, dm, p3, d3)) else {
        out.push(curve.clone());
        return false;
    };
    let a = adjust_curve(map, &first, params, depth + 1, out);
    let b = adjust_curve(map, &second, params, depth + 1, out);
    a && b
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl TrajectorySample {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    /// Sample at frame `k`, holding the last one past the end.
    pub fn at_frame(&self, k: usize) -> Option<&TrajectorySample> {
        self.samples.get(k.min(self.samples.len().saturating_sub(1)))
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].t > w[0].t)
    }
}

const ARC_TABLE_STEPS: usize = 512;

struct ArcTable<'a> {
    chain: &'a [CubicBezier],
    /// Cumulative length at (curve, step) boundaries.
    cumulative: Vec<f64>,
}

impl<'a> ArcTable<'a> {
    fn new(chain: &'a [CubicBezier]) -> Self {
        let mut cumulative = vec![0.0];
        let mut total = 0.0;
        for c in chain {
            let mut prev = c.eval(0.0);
            for i in 1..=ARC_TABLE_STEPS {
                let p = c.eval(i as f64 / ARC_TABLE_STEPS as f64);
                total += (p - prev).norm();
                cumulative.push(total);
                prev = p;
            }
        }
        ArcTable { chain, cumulative }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// (curve index, curve parameter) at arc length `s`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total());
        let idx = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.cumulative.len() - 1);
        let (a, b) = (self.cumulative[idx - 1], self.cumulative[idx]);
        let frac = if b > a { (s - a) / (b - a) } else { 0.0 };
        let step = idx - 1;
        let curve = (step / ARC_TABLE_STEPS).min(self.chain.len() - 1);
        let local = (step - curve * ARC_TABLE_STEPS) as f64 + frac;
        (curve, (local / ARC_TABLE_STEPS as f64).clamp(0.0, 1.0))
    }
}

fn tangent_heading(curve: &CubicBezier, t: f64) -> f64 {
    let mut d = curve.derivative(t);
    if d.norm() < 1e-12 {
        // Cusp at a zero-length handle: fall back to a nearby chord.
        let (a, b) = if t < 0.5 { (t, t + 1e-3) } else { (t - 1e-3, t) };
        d = curve.eval(b) - curve.eval(a);
    }
    d.y.atan2(d.x)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI { r + two_pi } else { r }
}

/// Resamples the chain at constant arc-length spacing `speed / sample_rate`,
/// for `duration` seconds, holding the final pose once the path runs out.
/// Headings follow the path tangent (flipped for backward driving); a
/// stationary vehicle stays at `start`.
pub fn sample_trajectory(chain: &[CubicBezier], m: &MovementAttributes, start: Anchor) -> Trajectory {
    let n = m.frame_count();
    let time = |i: usize| i as f64 / m.sample_rate;
    if m.is_stationary() || chain.is_empty() {
        let samples = (0..n)
            .map(|i| TrajectorySample { t: time(i), x: start.position.x, y: start.position.y, heading: start.heading })
            .collect();
        return Trajectory { samples };
    }
    let table = ArcTable::new(chain);
    let step = m.speed / m.sample_rate;
    let flip = if m.action == Action::Backward { std::f64::consts::PI } else { 0.0 };
    let samples = (0..n)
        .map(|i| {
            let (ci, t) = table.locate(i as f64 * step);
            let c = &chain[ci];
            let p = c.eval(t);
            TrajectorySample { t: time(i), x: p.x, y: p.y, heading: wrap_angle(tangent_heading(c, t) + flip) }
        })
        .collect();
    Trajectory { samples }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedMotion {
    pub destination: Option<LaneNode>,
    pub chain: AdjustedChain,
    pub trajectory: Trajectory,
}

/// Full pipeline for one vehicle: destination, Bezier fit, off-road
/// correction, resampling. Crazy-mode vehicles plan on the reversed map.
pub fn plan_motion<R: Rng>(
    map: &LaneMap,
    start: Anchor,
    m: &MovementAttributes,
    crazy_mode: bool,
    params: AdjustParams,
    rng: &mut R,
) -> Result<PlannedMotion, MotionError> {
    m.validate()?;
    let lanes = if crazy_mode { map.reversed() } else { map.clone() };
    let stationary = PlannedMotion {
        destination: None,
        chain: AdjustedChain { curves: Vec::new(), converged: true },
        trajectory: sample_trajectory(&[], m, start),
    };
    if m.is_stationary() {
        let dest = plan_destination(start.position, start.heading, m, &lanes, rng)?;
        return Ok(PlannedMotion { destination: Some(dest), ..stationary });
    }
    let dest = plan_destination(start.position, start.heading, m, &lanes, rng)?;
    let backward = m.action == Action::Backward;
    let sign = if backward { -1.0 } else { 1.0 };
    let d0 = start.forward() * sign;
    let d3 = dest.direction() * sign;
    let curve = match fit_cubic_bezier(start.position, d0, dest.midpoint(), d3) {
        Ok(c) => c,
        // Already at the destination node.
        Err(MotionError::DegenerateInput) => return Ok(PlannedMotion { destination: Some(dest), ..stationary }),
        Err(e) => return Err(e),
    };
    let travel = if backward { lanes.reversed() } else { lanes };
    let chain = adjust_trajectory(&travel, &[curve], params);
    let trajectory = sample_trajectory(&chain.curves, m, start);
    Ok(PlannedMotion { destination: Some(dest), chain, trajectory })
}
