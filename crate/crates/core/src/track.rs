//! Closed multi-lane track geometry.
//!
//! Every lane is a closed centerline built from straight and circular-arc
//! primitives and parameterized by arc length `s`. Lanes are ordered inner to
//! outer; lane `i + 1` is lane `i` offset to the right (w.r.t. the driving
//! direction) by `lane_spacing`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::TrackError;

/// Points further than this from a lane centerline cannot be tracked.
pub const LOST_DISTANCE: f64 = 1.0;

const CLOSURE_TOL: f64 = 1e-9;
const LENGTH_TOL: f64 = 1e-6;

pub type LaneId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// `angle` is signed: positive turns left.
    Arc {
        radius: f64,
        angle: f64,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }

    pub fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, angle } => angle.signum() / radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Position, tangent heading and curvature of a centerline point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
}

impl LanePose {
    /// Unit normal pointing to the left of the driving direction.
    pub fn left_normal(&self) -> (f64, f64) {
        (-self.theta.sin(), self.theta.cos())
    }
}

/// Closest point on a reference path to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceProjection {
    pub s_d: f64,
    pub x_d: f64,
    pub y_d: f64,
    pub theta_d: f64,
    pub kappa: f64,
    /// Signed distance from the path to the point, positive to the left.
    pub lateral_error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    start_s: f64,
    start: Pose2,
    segment: Segment,
}

impl Placed {
    fn pose_at(&self, t: f64) -> LanePose {
        let Pose2 { x, y, theta } = self.start;
        match self.segment {
            Segment::Straight { .. } => LanePose { x: x + t * theta.cos(), y: y + t * theta.sin(), theta, kappa: 0.0 },
            Segment::Arc { .. } => {
                let k = self.segment.curvature();
                let th = theta + k * t;
                LanePose {
                    x: x + (th.sin() - theta.sin()) / k,
                    y: y - (th.cos() - theta.cos()) / k,
                    theta: th,
                    kappa: k,
                }
            }
        }
    }

    /// Local parameter of the closest point on this primitive.
    fn closest_t(&self, qx: f64, qy: f64) -> f64 {
        let len = self.segment.length();
        let Pose2 { x, y, theta } = self.start;
        match self.segment {
            Segment::Straight { .. } => {
                let t = (qx - x) * theta.cos() + (qy - y) * theta.sin();
                t.clamp(0.0, len)
            }
            Segment::Arc { .. } => {
                let k = self.segment.curvature();
                let (cx, cy) = (x - theta.sin() / k, y + theta.cos() / k);
                let (dx, dy) = (qx - cx, qy - cy);
                if dx.hypot(dy) == 0.0 {
                    return 0.0;
                }
                let phi_q = dy.atan2(dx);
                let phi_0 = (y - cy).atan2(x - cx);
                let swept = if k > 0.0 { (phi_q - phi_0).rem_euclid(TAU) } else { (phi_0 - phi_q).rem_euclid(TAU) };
                let t = swept / k.abs();
                if t <= len {
                    t
                } else {
                    // outside the span: nearer endpoint, the start on a tie
                    let end = self.pose_at(len);
                    let d_start = (qx - x).hypot(qy - y);
                    let d_end = (qx - end.x).hypot(qy - end.y);
                    if d_end < d_start {
                        len
                    } else {
                        0.0
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub length: f64,
    pub width: f64,
    start: Pose2,
    placed: Vec<Placed>,
}

impl Lane {
    /// Builds a lane from a start pose and a closed sequence of primitives.
    pub fn new(id: LaneId, start: Pose2, segments: &[Segment], width: f64) -> Result<Self, TrackError> {
        if segments.is_empty() {
            return Err(TrackError::Infeasible(format!("lane {id} has no segments")));
        }
        let mut placed = Vec::with_capacity(segments.len());
        let mut s = 0.0;
        let mut pose = start;
        for seg in segments {
            let ok = match *seg {
                Segment::Straight { length } => length > 0.0,
                Segment::Arc { radius, angle } => radius > 0.0 && angle != 0.0,
            };
            if !ok {
                return Err(TrackError::Infeasible(format!("lane {id}: degenerate segment {seg:?}")));
            }
            let p = Placed { start_s: s, start: pose, segment: *seg };
            let end = p.pose_at(seg.length());
            pose = Pose2 { x: end.x, y: end.y, theta: end.theta };
            s += seg.length();
            placed.push(p);
        }
        let heading_gap = (pose.theta - start.theta).rem_euclid(TAU);
        let heading_gap = heading_gap.min(TAU - heading_gap);
        if (pose.x - start.x).hypot(pose.y - start.y) > CLOSURE_TOL || heading_gap > CLOSURE_TOL {
            return Err(TrackError::NotClosed { lane: id });
        }
        Ok(Self { id, length: s, width, start, placed })
    }

    pub fn start_pose(&self) -> Pose2 {
        self.start
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.placed.iter().map(|p| p.segment)
    }

    pub fn wrap(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        // rem_euclid can round up to exactly `length`
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    fn segment_index(&self, s: f64) -> usize {
        match self.placed.binary_search_by(|p| p.start_s.partial_cmp(&s).expect("finite arc length")) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    /// Pose and curvature at arc length `s` (taken modulo the lane length).
    pub fn pose_at(&self, s: f64) -> LanePose {
        let s = self.wrap(s);
        let p = &self.placed[self.segment_index(s)];
        p.pose_at(s - p.start_s)
    }

    /// Globally closest centerline point, without the lost-vehicle check.
    pub fn closest(&self, x: f64, y: f64) -> ReferenceProjection {
        let mut best: Option<(f64, f64, LanePose)> = None;
        for p in &self.placed {
            let t = p.closest_t(x, y);
            let pose = p.pose_at(t);
            let d = (x - pose.x).hypot(y - pose.y);
            let s = self.wrap(p.start_s + t);
            let better = match best {
                None => true,
                Some((bd, bs, _)) => d < bd || (d == bd && s < bs),
            };
            if better {
                best = Some((d, s, pose));
            }
        }
        let (_, s_d, pose) = best.expect("lane has segments");
        let (nx, ny) = pose.left_normal();
        ReferenceProjection {
            s_d,
            x_d: pose.x,
            y_d: pose.y,
            theta_d: pose.theta,
            kappa: pose.kappa,
            lateral_error: (x - pose.x) * nx + (y - pose.y) * ny,
        }
    }

    pub fn project(&self, x: f64, y: f64) -> Result<ReferenceProjection, TrackError> {
        let proj = self.closest(x, y);
        let distance = (x - proj.x_d).hypot(y - proj.y_d);
        if distance > LOST_DISTANCE {
            return Err(TrackError::Lost { lane: self.id, distance });
        }
        Ok(proj)
    }
}

/// Forward (wrap-aware) bumper-to-bumper distance from a rear vehicle to a
/// front vehicle on a closed lane of the given length.
pub fn gap_along_lane(s_rear: f64, s_front: f64, length: f64, body_length: f64) -> f64 {
    (s_front - s_rear).rem_euclid(length) - body_length
}

/// Stadium loop: two parallel straights joined by two semicircles, driven
/// counter-clockwise starting at the beginning of the lower straight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    /// Target perimeter of each lane, inner to outer.
    pub lane_lengths: Vec<f64>,
    pub lane_spacing: f64,
    /// End radius of the inner lane.
    pub end_radius: f64,
    pub lane_width: f64,
    /// Throughput checkpoint arc length per lane.
    pub checkpoint_s: Vec<f64>,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            lane_lengths: vec![16.0, 17.0],
            // offset closed curves differ in perimeter by 2*pi*d
            lane_spacing: 1.0 / TAU,
            end_radius: 0.8,
            lane_width: 0.15,
            checkpoint_s: vec![0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub lanes: Vec<Lane>,
    pub lane_spacing: f64,
    pub checkpoint_s: Vec<f64>,
}

pub fn build_track(spec: &TrackSpec) -> Result<Track, TrackError> {
    let n = spec.lane_lengths.len();
    if n < 2 {
        return Err(TrackError::TooFewLanes(n));
    }
    if !(spec.lane_spacing > 0.0) {
        return Err(TrackError::Infeasible("lane_spacing must be > 0".into()));
    }
    if !(spec.end_radius > 0.0) {
        return Err(TrackError::Infeasible("end_radius must be > 0".into()));
    }
    let straight = (spec.lane_lengths[0] - TAU * spec.end_radius) / 2.0;
    if !(straight > 0.0) {
        return Err(TrackError::Infeasible(format!(
            "inner length {} too short for end radius {}",
            spec.lane_lengths[0], spec.end_radius
        )));
    }
    let checkpoint_s = if spec.checkpoint_s.is_empty() {
        vec![0.0; n]
    } else if spec.checkpoint_s.len() == n {
        spec.checkpoint_s.clone()
    } else {
        return Err(TrackError::Infeasible(format!(
            "checkpoint_s has {} entries for {n} lanes",
            spec.checkpoint_s.len()
        )));
    };

    let mut lanes = Vec::with_capacity(n);
    for (i, &target) in spec.lane_lengths.iter().enumerate() {
        let offset = i as f64 * spec.lane_spacing;
        let radius = spec.end_radius + offset;
        let segments = [
            Segment::Straight { length: straight },
            Segment::Arc { radius, angle: PI },
            Segment::Straight { length: straight },
            Segment::Arc { radius, angle: PI },
        ];
        let start = Pose2 { x: 0.0, y: -offset, theta: 0.0 };
        let lane = Lane::new(i, start, &segments, spec.lane_width)?;
        if (lane.length - target).abs() > LENGTH_TOL {
            return Err(TrackError::LengthMismatch { lane: i, target, actual: lane.length });
        }
        lanes.push(lane);
    }
    Ok(Track { lanes, lane_spacing: spec.lane_spacing, checkpoint_s })
}

/// One row of the exported centerline sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolylineSample {
    pub lane_id: LaneId,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
}

impl Track {
    pub fn lane(&self, id: LaneId) -> Result<&Lane, TrackError> {
        self.lanes.get(id).ok_or(TrackError::NoSuchLane(id))
    }

    pub fn project_to_lane(&self, x: f64, y: f64, lane: LaneId) -> Result<ReferenceProjection, TrackError> {
        self.lane(lane)?.project(x, y)
    }

    pub fn are_adjacent(&self, a: LaneId, b: LaneId) -> bool {
        a < self.lanes.len() && b < self.lanes.len() && a.abs_diff(b) == 1
    }

    /// Centerline samples every `resolution` meters (plus the closing point).
    pub fn sample_polyline(&self, resolution: f64) -> Vec<PolylineSample> {
        let mut out = Vec::new();
        for lane in &self.lanes {
            let n = (lane.length / resolution).ceil().max(1.0) as usize;
            for k in 0..n {
                let s = lane.length * k as f64 / n as f64;
                let p = lane.pose_at(s);
                out.push(PolylineSample { lane_id: lane.id, s, x: p.x, y: p.y, theta: p.theta, kappa: p.kappa });
            }
        }
        out
    }

    pub fn polyline_csv(&self, resolution: f64) -> String {
        let mut out = String::from("lane_id,s,x,y,theta,kappa\n");
        for r in self.sample_polyline(resolution) {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.lane_id, r.s, r.x, r.y, r.theta, r.kappa);
        }
        out
    }
}
