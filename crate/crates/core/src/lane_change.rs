//! MOBIL lane-change decisions, the cooperative variant, and the lateral
//! blend path a vehicle tracks while it changes lanes.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleLimits;
use crate::error::{LaneChangeError, TrackError};
use crate::idm::{effective_jam_distance, idm_acceleration, FrontTarget, IdmParams};
use crate::track::{Lane, LaneId, ReferenceProjection, Track, LOST_DISTANCE};
use crate::tracking::{normalize_angle, ReferencePath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilParams {
    pub politeness: f64,
    /// Safe braking bound (m/s^2, positive).
    pub safe_braking: f64,
    pub accel_threshold: f64,
    /// Lane-change duration and cooperative safety time constant (s).
    pub gamma: f64,
    pub cooperative: bool,
}

impl MobilParams {
    pub fn normal(idm: &IdmParams) -> Self {
        Self { politeness: 0.5, safe_braking: 0.7 * idm.alpha, accel_threshold: 0.4, gamma: 2.0, cooperative: false }
    }

    pub fn aggressive(idm: &IdmParams) -> Self {
        Self { politeness: 1.0, safe_braking: 0.7 * idm.alpha, accel_threshold: 0.2, gamma: 2.0, cooperative: false }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(format!("politeness must be in [0, 1], got {}", self.politeness));
        }
        if !(self.safe_braking > 0.0) {
            return Err(format!("safe_braking must be > 0, got {}", self.safe_braking));
        }
        if !(self.accel_threshold >= 0.0) {
            return Err(format!("accel_threshold must be >= 0, got {}", self.accel_threshold));
        }
        if !(self.gamma > 0.0) {
            return Err(format!("gamma must be > 0, got {}", self.gamma));
        }
        Ok(())
    }
}

/// A vehicle next to the ego: gap is bumper-to-bumper, measured between the
/// ego and this vehicle whichever side it is on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateLane {
    pub lane: LaneId,
    pub new_front: Option<Neighbor>,
    pub new_rear: Option<Neighbor>,
    /// Urgency weight the ego's intent toward this lane carries (zero when
    /// it has none). A follower yielding to that intent has already priced
    /// the change in.
    pub announced: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneChangeContext {
    pub ego_speed: f64,
    pub current_front: Option<Neighbor>,
    pub old_rear: Option<Neighbor>,
    pub candidates: Vec<CandidateLane>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Stay,
    ChangeTo(LaneId),
}

/// Why a candidate lane was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocker {
    Overlap,
    Safety,
    Incentive,
    EscapeGap,
    CooperativeGap,
}

/// Accelerations behind one candidate's decision, kept so tests can
/// re-derive them independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateAssessment {
    pub lane: LaneId,
    pub delta_ego: f64,
    pub delta_new_rear: f64,
    pub delta_old_rear: f64,
    pub new_rear_after: Option<f64>,
    pub blocker: Option<Blocker>,
}

impl CandidateAssessment {
    pub fn incentive_passed(&self) -> bool {
        self.blocker != Some(Blocker::Incentive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub decision: Decision,
    /// First lane (inner first) where the driver's own gain alone clears the
    /// threshold, whether or not the change is allowed.
    pub desired: Option<LaneId>,
    pub assessments: Vec<CandidateAssessment>,
}

/// True when the new follower's post-change acceleration stays above
/// `-safe_braking`. Vacuously true without a new follower.
pub fn safety_criterion(new_rear_accel_after: Option<f64>, safe_braking: f64) -> bool {
    new_rear_accel_after.is_none_or(|a| a >= -safe_braking)
}

pub fn incentive_criterion(
    delta_ego: f64,
    delta_new_rear: f64,
    delta_old_rear: f64,
    politeness: f64,
    threshold: f64,
) -> bool {
    delta_ego + politeness * (delta_new_rear + delta_old_rear) > threshold
}

const MIN_GAP: f64 = 1e-3;

/// IDM acceleration of a follower at `speed` behind a leader, used for all
/// hypothetical accelerations in the decision.
fn follower_accel(speed: f64, leader: Option<(f64, f64)>, idm: &IdmParams, limits: &VehicleLimits) -> f64 {
    match leader {
        Some((gap, leader_speed)) => {
            // overlapping neighbours are vetoed separately
            let t = FrontTarget::real(gap.max(MIN_GAP), speed, leader_speed);
            let jam = effective_jam_distance(idm, leader_speed, limits.wheelbase);
            idm_acceleration(speed, Some(&t), idm, jam, limits.max_decel)
        }
        None => idm_acceleration(speed, None, idm, idm.s0, limits.max_decel),
    }
}

pub fn assess_candidate(
    ctx: &LaneChangeContext,
    cand: &CandidateLane,
    mobil: &MobilParams,
    idm: &IdmParams,
    limits: &VehicleLimits,
) -> CandidateAssessment {
    let v = ctx.ego_speed;
    let body = limits.body_length;
    let lead = |n: &Neighbor| (n.gap, n.speed);

    let ego_before = follower_accel(v, ctx.current_front.as_ref().map(lead), idm, limits);
    let ego_after = follower_accel(v, cand.new_front.as_ref().map(lead), idm, limits);

    let (nr_before, nr_after) = match cand.new_rear {
        Some(r) => {
            let leader_before = cand.new_front.map(|f| (r.gap + body + f.gap, f.speed));
            let after = follower_accel(r.speed, Some((r.gap, v)), idm, limits);
            let mut before = follower_accel(r.speed, leader_before, idm, limits);
            if mobil.cooperative && cand.announced > 0.0 {
                before = before.min(cand.announced * after);
            }
            (before, Some(after))
        }
        None => (0.0, None),
    };
    let (or_before, or_after) = match ctx.old_rear {
        Some(r) => {
            let before = follower_accel(r.speed, Some((r.gap, v)), idm, limits);
            let leader_after = ctx.current_front.map(|f| (r.gap + body + f.gap, f.speed));
            (before, follower_accel(r.speed, leader_after, idm, limits))
        }
        None => (0.0, 0.0),
    };

    let mut out = CandidateAssessment {
        lane: cand.lane,
        delta_ego: ego_after - ego_before,
        delta_new_rear: nr_after.map_or(0.0, |a| a - nr_before),
        delta_old_rear: or_after - or_before,
        new_rear_after: nr_after,
        blocker: None,
    };

    let overlap = cand.new_front.is_some_and(|f| f.gap <= 0.0) || cand.new_rear.is_some_and(|r| r.gap <= 0.0);
    let safe_braking = if mobil.cooperative { idm.alpha } else { mobil.safe_braking };
    // Vetoes come first so a human request that skips the incentive still
    // learns why the change would be unsafe.
    out.blocker = if overlap {
        Some(Blocker::Overlap)
    } else if !safety_criterion(nr_after, safe_braking) {
        Some(Blocker::Safety)
    } else if cand.new_front.is_some_and(|f| f.gap <= effective_jam_distance(idm, f.speed, limits.wheelbase)) {
        Some(Blocker::EscapeGap)
    } else if mobil.cooperative && !cooperative_guard(ctx.ego_speed, cand, idm, mobil) {
        Some(Blocker::CooperativeGap)
    } else if !incentive_criterion(
        out.delta_ego,
        out.delta_new_rear,
        out.delta_old_rear,
        mobil.politeness,
        mobil.accel_threshold,
    ) {
        Some(Blocker::Incentive)
    } else {
        None
    };
    out
}

/// Low-speed gap guard: `s > s0 + gamma * closing_rate` against both the new
/// front and the new rear; receding vehicles count as zero closing rate.
pub fn cooperative_guard(ego_speed: f64, cand: &CandidateLane, idm: &IdmParams, mobil: &MobilParams) -> bool {
    let ok = |gap: f64, closing: f64| gap > idm.s0 + mobil.gamma * closing.max(0.0);
    cand.new_front.is_none_or(|f| ok(f.gap, ego_speed - f.speed))
        && cand.new_rear.is_none_or(|r| ok(r.gap, r.speed - ego_speed))
}

/// Evaluates candidates inner lane first; the first passing lane wins.
pub fn evaluate_lane_change(
    ctx: &LaneChangeContext,
    mobil: &MobilParams,
    idm: &IdmParams,
    limits: &VehicleLimits,
) -> Evaluation {
    let mut cands = ctx.candidates.clone();
    cands.sort_by_key(|c| c.lane);
    let assessments: Vec<_> = cands.iter().map(|c| assess_candidate(ctx, c, mobil, idm, limits)).collect();
    let decision =
        assessments.iter().find(|a| a.blocker.is_none()).map_or(Decision::Stay, |a| Decision::ChangeTo(a.lane));
    let desired = assessments
        .iter()
        .find(|a| a.delta_ego + mobil.politeness * a.delta_old_rear > mobil.accel_threshold)
        .map(|a| a.lane);
    Evaluation { decision, desired, assessments }
}

pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Reference path of a lane change: the `from` centerline shifted sideways
/// by a smoothstep profile until it lies on `to`.
#[derive(Debug, Clone, Copy)]
pub struct LaneChangePath<'a> {
    pub lane: &'a Lane,
    pub from: LaneId,
    pub to: LaneId,
    pub s_start: f64,
    pub distance: f64,
    /// Signed lateral shift (positive = left) reached at completion.
    pub offset: f64,
}

pub fn lane_change_path<'a>(
    from: LaneId,
    to: LaneId,
    s_start: f64,
    v_at_start: f64,
    gamma: f64,
    min_distance: f64,
    track: &'a Track,
) -> Result<LaneChangePath<'a>, LaneChangeError> {
    if !track.are_adjacent(from, to) {
        return Err(LaneChangeError::NotAdjacent { from, to });
    }
    let lane = &track.lanes[from];
    // higher lane ids lie to the right
    let offset = if to > from { -track.lane_spacing } else { track.lane_spacing };
    Ok(LaneChangePath {
        lane,
        from,
        to,
        s_start: lane.wrap(s_start),
        distance: (v_at_start * gamma).max(min_distance),
        offset,
    })
}

impl LaneChangePath<'_> {
    /// Signed distance travelled along `from` since the start, in
    /// (-length/2, length/2].
    fn travelled(&self, s: f64) -> f64 {
        let len = self.lane.length;
        let d = (s - self.s_start).rem_euclid(len);
        if d > len / 2.0 {
            d - len
        } else {
            d
        }
    }

    pub fn progress(&self, s: f64) -> f64 {
        (self.travelled(s) / self.distance).clamp(0.0, 1.0)
    }

    pub fn lateral_offset(&self, s: f64) -> f64 {
        self.offset * smoothstep(self.progress(s))
    }

    /// Offset and its first two derivatives with respect to `s`.
    fn offset_derivs(&self, s: f64) -> (f64, f64, f64) {
        let u = self.travelled(s) / self.distance;
        if u <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if u >= 1.0 {
            (self.offset, 0.0, 0.0)
        } else {
            let d = self.distance;
            (
                self.offset * u * u * (3.0 - 2.0 * u),
                self.offset * 6.0 * u * (1.0 - u) / d,
                self.offset * (6.0 - 12.0 * u) / (d * d),
            )
        }
    }

    /// Point on the blend path at centerline parameter `s`.
    pub fn point(&self, s: f64) -> (f64, f64) {
        let c = self.lane.pose_at(s);
        let (nx, ny) = c.left_normal();
        let w = self.lateral_offset(s);
        (c.x + w * nx, c.y + w * ny)
    }

    /// Closest point by Newton iteration on the centerline parameter,
    /// seeded with the projection onto the `from` centerline.
    pub fn closest(&self, x: f64, y: f64) -> ReferenceProjection {
        let mut s = self.lane.closest(x, y).s_d;
        let mut frame = None;
        for _ in 0..30 {
            let c = self.lane.pose_at(s);
            let (w, w1, w2) = self.offset_derivs(s);
            let (tx, ty) = (c.theta.cos(), c.theta.sin());
            let (nx, ny) = (-ty, tx);
            let k = c.kappa;
            // derivatives in the (tangent, normal) frame of the centerline
            let (a, b) = (1.0 - w * k, w1);
            let (cc, dd) = (-2.0 * w1 * k, (1.0 - w * k) * k + w2);
            let (px, py) = (c.x + w * nx, c.y + w * ny);
            let (rx, ry) = (px - x, py - y);
            let (rt, rn) = (rx * tx + ry * ty, rx * nx + ry * ny);
            let f = rt * a + rn * b;
            let fp = a * a + b * b + rt * cc + rn * dd;
            frame = Some((s, px, py, c.theta + b.atan2(a), (a * dd - b * cc) / (a * a + b * b).powf(1.5)));
            if fp <= 0.0 {
                break;
            }
            let step = (f / fp).clamp(-0.05, 0.05);
            s = self.lane.wrap(s - step);
            if step.abs() < 1e-13 {
                break;
            }
        }
        let (s_d, px, py, theta, kappa) = frame.expect("at least one iteration");
        let (nx, ny) = (-theta.sin(), theta.cos());
        ReferenceProjection {
            s_d,
            x_d: px,
            y_d: py,
            theta_d: normalize_angle(theta),
            kappa,
            lateral_error: (x - px) * nx + (y - py) * ny,
        }
    }
}

impl ReferencePath for LaneChangePath<'_> {
    fn project(&self, x: f64, y: f64) -> Result<ReferenceProjection, TrackError> {
        let p = self.closest(x, y);
        let distance = (x - p.x_d).hypot(y - p.y_d);
        if distance > LOST_DISTANCE {
            return Err(TrackError::Lost { lane: self.from, distance });
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{build_track, TrackSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lim() -> VehicleLimits {
        VehicleLimits::minicar()
    }

    #[test]
    fn safety_examples() {
        assert!(safety_criterion(None, 0.35));
        assert!(!safety_criterion(Some(-0.5), 0.7 * 0.5));
        assert!(safety_criterion(Some(0.1), 0.35));
        assert!(safety_criterion(Some(-0.35), 0.35));
    }

    #[test]
    fn incentive_examples() {
        assert!(incentive_criterion(0.5, -0.1, 0.0, 0.5, 0.4));
        assert!(!incentive_criterion(0.0, 0.0, 0.0, 0.5, 0.4));
        // exactly equal to the threshold: strict inequality means stay
        assert!(!incentive_criterion(0.25, -0.125, 0.075, 1.0, 0.2));
        let lhs: f64 = 0.25 - 0.125 + 0.075;
        assert_eq!(lhs, 0.2);
        assert!(!incentive_criterion(0.3, -0.2, 0.1, 1.0, 0.2));
    }

    fn blocked_ctx(cands: Vec<CandidateLane>) -> LaneChangeContext {
        LaneChangeContext {
            ego_speed: 0.1,
            current_front: Some(Neighbor { id: 1, gap: 0.2, speed: 0.0 }),
            old_rear: None,
            candidates: cands,
        }
    }

    #[test]
    fn free_target_lane_is_taken() {
        let idm = IdmParams::normal();
        let mobil = MobilParams::normal(&idm);
        let ctx = blocked_ctx(vec![CandidateLane { lane: 1, new_front: None, new_rear: None, announced: 0.0 }]);
        let ev = evaluate_lane_change(&ctx, &mobil, &idm, &lim());
        assert_eq!(ev.decision, Decision::ChangeTo(1));
        assert!(ev.assessments[0].delta_ego > mobil.accel_threshold);
    }

    #[test]
    fn fast_closing_rear_vetoes() {
        let idm = IdmParams::normal();
        let mobil = MobilParams::normal(&idm);
        let rear = Neighbor { id: 7, gap: 0.4, speed: 0.4 };
        let ctx = blocked_ctx(vec![CandidateLane { lane: 1, new_front: None, new_rear: Some(rear), announced: 0.0 }]);
        let ev = evaluate_lane_change(&ctx, &mobil, &idm, &lim());
        assert_eq!(ev.decision, Decision::Stay);
        assert_eq!(ev.assessments[0].blocker, Some(Blocker::Safety));
        assert_eq!(ev.desired, Some(1));
    }

    #[test]
    fn overlap_is_reported_without_incentive() {
        let idm = IdmParams::normal();
        let mobil = MobilParams::normal(&idm);
        let ctx = LaneChangeContext {
            ego_speed: 0.4,
            current_front: None,
            old_rear: None,
            candidates: vec![CandidateLane {
                lane: 1,
                new_front: Some(Neighbor { id: 2, gap: -0.05, speed: 0.4 }),
                new_rear: None,
                announced: 0.0,
            }],
        };
        let a = assess_candidate(&ctx, &ctx.candidates[0], &mobil, &idm, &lim());
        assert!(!incentive_criterion(
            a.delta_ego,
            a.delta_new_rear,
            a.delta_old_rear,
            mobil.politeness,
            mobil.accel_threshold
        ));
        assert_eq!(a.blocker, Some(Blocker::Overlap));
    }

    #[test]
    fn announced_intent_prices_in_the_yield() {
        let idm = IdmParams::normal();
        let mobil = MobilParams { cooperative: true, ..MobilParams::normal(&idm) };
        let rear = Neighbor { id: 7, gap: 0.5, speed: 0.1 };
        let front = Neighbor { id: 8, gap: 1.2, speed: 0.2 };
        let mut cand = CandidateLane { lane: 1, new_front: Some(front), new_rear: Some(rear), announced: 0.0 };
        let ctx = blocked_ctx(vec![cand]);
        let plain = assess_candidate(&ctx, &cand, &mobil, &idm, &lim());
        cand.announced = 0.8;
        let priced = assess_candidate(&ctx, &cand, &mobil, &idm, &lim());
        let after = priced.new_rear_after.unwrap();
        let before = plain.new_rear_after.unwrap() - plain.delta_new_rear;
        assert_eq!(priced.new_rear_after, plain.new_rear_after);
        assert!((priced.delta_new_rear - (after - before.min(0.8 * after))).abs() < 1e-15);
        assert!(priced.delta_new_rear > plain.delta_new_rear);
        // An egocentric driver never prices intents in.
        let ego = MobilParams::normal(&idm);
        assert_eq!(
            assess_candidate(&ctx, &cand, &ego, &idm, &lim()).delta_new_rear,
            assess_candidate(&ctx, &CandidateLane { announced: 0.0, ..cand }, &ego, &idm, &lim()).delta_new_rear
        );
    }

    #[test]
    fn cooperative_guard_example() {
        let idm = IdmParams::normal();
        let mobil = MobilParams { cooperative: true, ..MobilParams::normal(&idm) };
        let ego = 0.2;
        // front at or above v0 has no escape distance, so only the guard binds
        let mut cand = CandidateLane {
            lane: 1,
            new_front: Some(Neighbor { id: 3, gap: 0.2, speed: ego - 0.1 }),
            new_rear: None,
            announced: 0.0,
        };
        assert!(!cooperative_guard(ego, &cand, &idm, &mobil));
        cand.new_front = Some(Neighbor { id: 3, gap: 0.2, speed: ego });
        assert!(cooperative_guard(ego, &cand, &idm, &mobil));

        let ctx = LaneChangeContext {
            ego_speed: 0.0,
            current_front: Some(Neighbor { id: 1, gap: 0.1, speed: 0.0 }),
            old_rear: None,
            candidates: vec![CandidateLane {
                lane: 1,
                new_front: Some(Neighbor { id: 3, gap: 0.09, speed: 0.4 }),
                new_rear: None,
                announced: 0.0,
            }],
        };
        let ev = evaluate_lane_change(&ctx, &mobil, &idm, &lim());
        assert_eq!(ev.assessments[0].blocker, Some(Blocker::EscapeGap));
        let ctx = LaneChangeContext {
            candidates: vec![CandidateLane {
                lane: 1,
                new_front: Some(Neighbor { id: 3, gap: 0.6, speed: 0.5 }),
                new_rear: None,
                announced: 0.0,
            }],
            ..ctx
        };
        assert_eq!(evaluate_lane_change(&ctx, &mobil, &idm, &lim()).decision, Decision::ChangeTo(1));
    }

    #[test]
    fn cooperative_uses_alpha_as_safe_braking() {
        let idm = IdmParams::normal();
        let ego = MobilParams::normal(&idm);
        let coop = MobilParams { cooperative: true, ..ego };
        // follower lands at an after-acceleration between -0.5 and -0.35
        let mut found = false;
        for k in 0..200 {
            let gap = 0.5 + 0.01 * k as f64;
            let rear = Neighbor { id: 2, gap, speed: 0.2 };
            let ctx = LaneChangeContext {
                ego_speed: 0.05,
                current_front: Some(Neighbor { id: 1, gap: 0.15, speed: 0.0 }),
                old_rear: None,
                candidates: vec![CandidateLane { lane: 1, new_front: None, new_rear: Some(rear), announced: 0.0 }],
            };
            let a = evaluate_lane_change(&ctx, &ego, &idm, &lim());
            let after = a.assessments[0].new_rear_after.unwrap();
            if (-0.5..-0.35).contains(&after) {
                assert_eq!(a.assessments[0].blocker, Some(Blocker::Safety));
                let b = evaluate_lane_change(&ctx, &coop, &idm, &lim());
                assert_ne!(b.assessments[0].blocker, Some(Blocker::Safety));
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn inner_lane_evaluated_first() {
        let idm = IdmParams::normal();
        let mobil = MobilParams::normal(&idm);
        let ctx = blocked_ctx(vec![
            CandidateLane { lane: 2, new_front: None, new_rear: None, announced: 0.0 },
            CandidateLane { lane: 0, new_front: None, new_rear: None, announced: 0.0 },
        ]);
        assert_eq!(evaluate_lane_change(&ctx, &mobil, &idm, &lim()).decision, Decision::ChangeTo(0));
    }

    #[test]
    fn path_endpoints_and_midpoint() {
        let track = build_track(&TrackSpec::default()).unwrap();
        let path = lane_change_path(0, 1, 1.0, 0.4, 2.0, 0.6, &track).unwrap();
        assert_abs_diff_eq!(path.distance, 0.8, epsilon = 1e-15);
        assert_eq!(path.lateral_offset(1.0), 0.0);
        let (x0, y0) = path.point(1.0);
        let c = track.lanes[0].pose_at(1.0);
        assert_eq!((x0, y0), (c.x, c.y));
        let (x1, y1) = path.point(1.8);
        let q = track.lanes[1].closest(x1, y1);
        assert_abs_diff_eq!(q.lateral_error, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(path.lateral_offset(1.4).abs(), track.lane_spacing / 2.0, epsilon = 1e-12);
        // slow start falls back to the minimum distance
        let slow = lane_change_path(1, 0, 3.0, 0.0, 2.0, 0.6, &track).unwrap();
        assert_eq!(slow.distance, 0.6);
        assert!(slow.offset > 0.0);
        assert!(matches!(lane_change_path(0, 2, 0.0, 0.4, 2.0, 0.6, &track), Err(LaneChangeError::NotAdjacent { .. })));
    }

    #[test]
    fn path_projection_matches_dense_sampling() {
        let track = build_track(&TrackSpec::default()).unwrap();
        // change placed on the arc to exercise curvature terms
        let path = lane_change_path(0, 1, 5.3, 0.4, 2.0, 0.6, &track).unwrap();
        for &(ds, lat) in &[(0.1, 0.01), (0.35, -0.03), (0.55, 0.02), (0.79, 0.0)] {
            let s = 5.3 + ds;
            let (px, py) = path.point(s);
            let c = track.lanes[0].pose_at(s);
            let (nx, ny) = c.left_normal();
            let (qx, qy) = (px + lat * nx, py + lat * ny);
            let proj = path.closest(qx, qy);
            let mut best = f64::INFINITY;
            for k in 0..=4000 {
                let (sx, sy) = path.point(4.8 + k as f64 * 0.0005);
                best = best.min((sx - qx).hypot(sy - qy));
            }
            let d = (qx - proj.x_d).hypot(qy - proj.y_d);
            assert!(d <= best + 1e-7, "newton {d} vs sampled {best}");
            assert_abs_diff_eq!(proj.lateral_error.abs(), d, epsilon = 1e-12);
            // tangent is perpendicular to the residual
            let (rx, ry) = (qx - proj.x_d, qy - proj.y_d);
            assert!((rx * proj.theta_d.cos() + ry * proj.theta_d.sin()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn zero_politeness_ignores_followers(dac in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, t in 0.0f64..0.5) {
            prop_assert_eq!(incentive_criterion(dac, x, y, 0.0, t), incentive_criterion(dac, 0.0, 0.0, 0.0, t));
        }

        #[test]
        fn safety_veto_dominates(rear_gap in 0.05f64..3.0, rear_v in 0.0f64..0.8, ego_v in 0.0f64..0.4,
                                 front_gap in 0.05f64..3.0, threshold in 0.0f64..0.5, p in 0.0f64..1.0) {
            let idm = IdmParams::normal();
            let mobil = MobilParams { politeness: p, accel_threshold: threshold, ..MobilParams::normal(&idm) };
            let ctx = LaneChangeContext {
                ego_speed: ego_v,
                current_front: Some(Neighbor { id: 1, gap: front_gap, speed: 0.0 }),
                old_rear: None,
                candidates: vec![CandidateLane { lane: 1, new_front: None, new_rear: Some(Neighbor { id: 2, gap: rear_gap, speed: rear_v }), announced: 0.0 }],
            };
            let ev = evaluate_lane_change(&ctx, &mobil, &idm, &lim());
            let after = ev.assessments[0].new_rear_after;
            if !safety_criterion(after, mobil.safe_braking) {
                prop_assert_eq!(ev.decision, Decision::Stay);
            }
        }
    }
}
