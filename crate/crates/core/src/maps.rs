//! Synthetic lane maps: a generic junction builder plus the five-map suite
//! used by the motion tests and the demo bundle.
//!
//! Traffic keeps right. Each junction arm carries two lanes per direction,
//! 3.5 m wide, and lane centerlines are cut into nodes of about 2 m.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::motion::fit_cubic_bezier;
use crate::scene::{LaneMap, LaneNode, LaneType, Point2};

pub const LANE_WIDTH: f64 = 3.5;
/// Lanes stop this far from the junction center.
pub const JUNCTION_HALF: f64 = 7.0;
pub const NODE_SPACING: f64 = 2.0;
const BOUNDARY_SPACING: f64 = 10.0;
/// Lateral offsets of the two lanes from the arm axis.
const LANE_OFFSETS: [f64; 2] = [0.5 * LANE_WIDTH, 1.5 * LANE_WIDTH];

/// One road leaving a junction.
#[derive(Clone, Copy, Debug)]
pub struct Arm {
    /// Outward unit direction.
    pub direction: Point2,
    /// Distance from the junction center to the far end.
    pub length: f64,
}

impl Arm {
    pub fn new(angle: f64, length: f64) -> Self {
        Arm { direction: Point2::new(angle.cos(), angle.sin()), length }
    }

    fn normal(&self) -> Point2 {
        Point2::new(-self.direction.y, self.direction.x)
    }
}

fn push_polyline(nodes: &mut Vec<LaneNode>, points: &[Point2], lane_type: LaneType) {
    for w in points.windows(2) {
        if let Ok(n) = LaneNode::new(w[0], w[1], lane_type) {
            nodes.push(n);
        }
    }
}

fn segment_points(a: Point2, b: Point2, spacing: f64) -> Vec<Point2> {
    let n = ((b - a).norm() / spacing).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

/// Junction with `arms`; every in-lane connects to the same-index out-lane of
/// every other arm through a cubic connector.
pub fn junction_map(center: Point2, arms: &[Arm]) -> LaneMap {
    let mut nodes = Vec::new();
    for arm in arms {
        let (u, n) = (arm.direction, arm.normal());
        for off in LANE_OFFSETS {
            let near = center + u * JUNCTION_HALF;
            let far = center + u * arm.length;
            push_polyline(&mut nodes, &segment_points(near - n * off, far - n * off, NODE_SPACING), LaneType::Centerline);
            push_polyline(&mut nodes, &segment_points(far + n * off, near + n * off, NODE_SPACING), LaneType::Centerline);
        }
        for side in [-1.0, 1.0] {
            let edge = n * (side * 2.0 * LANE_WIDTH);
            push_polyline(
                &mut nodes,
                &segment_points(center + u * JUNCTION_HALF + edge, center + u * arm.length + edge, BOUNDARY_SPACING),
                LaneType::Boundary,
            );
        }
    }
    for (a, from) in arms.iter().enumerate() {
        for (b, to) in arms.iter().enumerate() {
            if a == b {
                continue;
            }
            for off in LANE_OFFSETS {
                let p0 = center + from.direction * JUNCTION_HALF + from.normal() * off;
                let p3 = center + to.direction * JUNCTION_HALF - to.normal() * off;
                let Ok(curve) = fit_cubic_bezier(p0, -from.direction, p3, to.direction) else { continue };
                let approx_len = (p3 - p0).norm() * 1.3;
                let steps = (approx_len / NODE_SPACING).ceil().max(1.0) as usize;
                let pts: Vec<Point2> = (0..=steps).map(|i| curve.eval(i as f64 / steps as f64)).collect();
                push_polyline(&mut nodes, &pts, LaneType::Centerline);
            }
        }
    }
    LaneMap::new(nodes)
}

/// Junction center of the demo maps. With it the ego lane is y = 0.
pub const DEMO_CENTER: (f64, f64) = (45.0, 0.5 * LANE_WIDTH);

fn demo_center() -> Point2 {
    Point2::new(DEMO_CENTER.0, DEMO_CENTER.1)
}

const WEST: f64 = 55.0;
const EAST: f64 = 65.0;
const NORTH_SOUTH: f64 = 40.0;

/// Straight road along x from -10 to 110; lanes at y = 0 and -3.5 head +x,
/// y = 3.5 and 7 head -x.
pub fn straight_road() -> LaneMap {
    junction_map(demo_center(), &[Arm::new(PI, WEST), Arm::new(0.0, EAST)])
}

/// Four-way crossing at x = 45 on the straight road.
pub fn crossroad() -> LaneMap {
    junction_map(
        demo_center(),
        &[Arm::new(PI, WEST), Arm::new(0.0, EAST), Arm::new(FRAC_PI_2, NORTH_SOUTH), Arm::new(-FRAC_PI_2, NORTH_SOUTH)],
    )
}

/// Side road branching south.
pub fn t_junction() -> LaneMap {
    junction_map(demo_center(), &[Arm::new(PI, WEST), Arm::new(0.0, EAST), Arm::new(-FRAC_PI_2, NORTH_SOUTH)])
}

/// Road turning left (north) at x = 45.
pub fn l_corner() -> LaneMap {
    junction_map(demo_center(), &[Arm::new(PI, WEST), Arm::new(FRAC_PI_2, NORTH_SOUTH)])
}

pub const CURVE_RADIUS: f64 = 80.0;

/// Left-bending road on a circle of radius 80 m, about 110 m long, passing
/// the origin with the same lane layout as the straight road.
pub fn curved_road() -> LaneMap {
    let c = Point2::new(0.0, CURVE_RADIUS + 0.5 * LANE_WIDTH);
    let (a0, a1) = (-FRAC_PI_2 - 0.2, -FRAC_PI_2 + 1.175);
    let arc = |r: f64, from: f64, to: f64, spacing: f64| {
        let n = ((to - from).abs() * r / spacing).ceil() as usize;
        (0..=n).map(|i| {
            let a = from + (to - from) * i as f64 / n as f64;
            c + Point2::new(a.cos(), a.sin()) * r
        }).collect::<Vec<_>>()
    };
    let mut nodes = Vec::new();
    for off in LANE_OFFSETS {
        push_polyline(&mut nodes, &arc(CURVE_RADIUS + off, a0, a1, NODE_SPACING), LaneType::Centerline);
        push_polyline(&mut nodes, &arc(CURVE_RADIUS - off, a1, a0, NODE_SPACING), LaneType::Centerline);
    }
    for side in [-1.0, 1.0] {
        push_polyline(&mut nodes, &arc(CURVE_RADIUS + side * 2.0 * LANE_WIDTH, a0, a1, BOUNDARY_SPACING), LaneType::Boundary);
    }
    LaneMap::new(nodes)
}

/// Named maps of the synthetic suite.
pub fn suite() -> Vec<(&'static str, LaneMap)> {
    vec![
        ("straight", straight_road()),
        ("crossroad", crossroad()),
        ("t_junction", t_junction()),
        ("l_corner", l_corner()),
        ("curved", curved_road()),
    ]
}
