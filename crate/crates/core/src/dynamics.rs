//! Kinematic bicycle model of the miniature car and its actuator limits.

use serde::{Deserialize, Serialize};

use crate::error::TrackError;
use crate::track::{LaneId, Track};

/// Physical constants of one vehicle. Angles in radians, SI units elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleLimits {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_steer_rate: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub body_length: f64,
    pub body_width: f64,
}

/// Steering rate of the physical servo. Too slow to follow the track at
/// 0.4 m/s, so simulations default to [`VehicleLimits::minicar`].
pub const SERVO_STEER_RATE: f64 = 0.076;

/// Turning radius measured on the physical car. The ideal bicycle model with
/// the same wheelbase and steering limit turns tighter (about 0.375 m).
pub const MEASURED_MIN_TURN_RADIUS: f64 = 0.56;

impl VehicleLimits {
    pub fn minicar() -> Self {
        Self {
            wheelbase: 0.122,
            max_steer: 18f64.to_radians(),
            max_steer_rate: 1.5,
            max_speed: 1.5,
            max_accel: 1.0,
            max_decel: 2.0,
            body_length: 0.197,
            body_width: 0.081,
        }
    }

    /// Same car with the servo's measured steering rate.
    pub fn minicar_servo() -> Self {
        Self { max_steer_rate: SERVO_STEER_RATE, ..Self::minicar() }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "permissive" | "minicar" => Some(Self::minicar()),
            "servo" => Some(Self::minicar_servo()),
            _ => None,
        }
    }

    /// Radius of the tightest circle the kinematic model can drive.
    pub fn kinematic_turn_radius(&self) -> f64 {
        self.wheelbase / self.max_steer.tan()
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("max_steer", self.max_steer),
            ("max_steer_rate", self.max_steer_rate),
            ("max_speed", self.max_speed),
            ("max_accel", self.max_accel),
            ("max_decel", self.max_decel),
            ("body_length", self.body_length),
            ("body_width", self.body_width),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {value}"));
            }
        }
        if self.max_steer >= std::f64::consts::FRAC_PI_2 {
            return Err(format!("max_steer must be below pi/2, got {}", self.max_steer));
        }
        Ok(())
    }
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self::minicar()
    }
}

/// A lane change in progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub from: LaneId,
    pub to: LaneId,
    /// Smoothstep parameter in [0, 1].
    pub progress: f64,
    /// Arc length on `from` where the maneuver began.
    pub s_start: f64,
    /// Longitudinal distance over which the maneuver completes.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub psi: f64,
    pub lane: LaneId,
    /// Arc length of the projection onto `lane`.
    pub s: f64,
    pub lateral: f64,
    pub lane_change: Option<LaneChange>,
}

impl VehicleState {
    /// A vehicle resting on the centerline of `lane` at arc length `s`.
    pub fn on_lane(track: &Track, lane: LaneId, s: f64, v: f64) -> Result<Self, TrackError> {
        let l = track.lane(lane)?;
        let p = l.pose_at(s);
        Ok(Self { x: p.x, y: p.y, theta: p.theta, v, psi: 0.0, lane, s: l.wrap(s), lateral: 0.0, lane_change: None })
    }

    /// Refreshes `s` and `lateral` from the Cartesian pose.
    pub fn reproject(&mut self, track: &Track) -> Result<(), TrackError> {
        let proj = track.project_to_lane(self.x, self.y, self.lane)?;
        self.s = proj.s_d;
        self.lateral = proj.lateral_error;
        Ok(())
    }

    /// Lanes this vehicle occupies: both lanes while changing.
    pub fn occupied_lanes(&self) -> impl Iterator<Item = LaneId> {
        let (a, b) = match self.lane_change {
            Some(lc) => (lc.from, Some(lc.to)),
            None => (self.lane, None),
        };
        std::iter::once(a).chain(b)
    }
}

/// Applies steering-angle, steering-rate, speed and acceleration limits to
/// the desired actuator setpoints. Returns `(psi, v)`.
pub fn clamp_actuation(
    prev_psi: f64,
    desired_psi: f64,
    desired_v: f64,
    prev_v: f64,
    dt: f64,
    limits: &VehicleLimits,
) -> (f64, f64) {
    let dpsi = limits.max_steer_rate * dt;
    let psi = desired_psi.clamp(prev_psi - dpsi, prev_psi + dpsi).clamp(-limits.max_steer, limits.max_steer);
    let v =
        desired_v.clamp(prev_v - limits.max_decel * dt, prev_v + limits.max_accel * dt).clamp(0.0, limits.max_speed);
    (psi, v)
}

/// Advances the pose by one semi-implicit Euler step of the bicycle model.
///
/// Commands are clamped first; the clamped speed and steering angle are then
/// held over `dt`. Lane-relative fields (`s`, `lateral`) are left for the
/// caller to refresh with [`VehicleState::reproject`].
pub fn step_kinematics(
    state: &VehicleState,
    commanded_v: f64,
    commanded_psi: f64,
    dt: f64,
    limits: &VehicleLimits,
) -> VehicleState {
    let (psi, v) = clamp_actuation(state.psi, commanded_psi, commanded_v, state.v, dt, limits);
    let (x, y, theta) = integrate_pose(state.x, state.y, state.theta, v, psi, dt, limits.wheelbase);
    VehicleState { x, y, theta, v, psi, ..*state }
}

/// One Euler step of the bicycle model with `v` and `psi` held.
#[inline]
pub fn integrate_pose(x: f64, y: f64, theta: f64, v: f64, psi: f64, dt: f64, wheelbase: f64) -> (f64, f64, f64) {
    (x + v * theta.cos() * dt, y + v * theta.sin() * dt, theta + v * psi.tan() / wheelbase * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn at_origin(v: f64, psi: f64) -> VehicleState {
        VehicleState { x: 0.0, y: 0.0, theta: 0.0, v, psi, lane: 0, s: 0.0, lateral: 0.0, lane_change: None }
    }

    #[test]
    fn straight_line_step() {
        let lim = VehicleLimits::minicar();
        let next = step_kinematics(&at_origin(0.4, 0.0), 0.4, 0.0, 0.01, &lim);
        assert_abs_diff_eq!(next.x, 0.004, epsilon = 1e-15);
        assert_eq!(next.y, 0.0);
        assert_eq!(next.theta, 0.0);
    }

    #[test]
    fn zero_speed_keeps_pose() {
        let lim = VehicleLimits::minicar();
        let mut st = at_origin(0.0, 0.2);
        st.theta = 1.0;
        let next = step_kinematics(&st, 0.0, 0.3, 0.01, &lim);
        assert_eq!((next.x, next.y, next.theta), (0.0, 0.0, 1.0));
    }

    #[test]
    fn full_circle_at_max_steer_closes() {
        let lim = VehicleLimits::minicar();
        let psi = lim.max_steer;
        let rate = 0.4 * psi.tan() / lim.wheelbase;
        assert_abs_diff_eq!(rate, 1.0653, epsilon = 1e-4);
        let radius = lim.kinematic_turn_radius();
        assert_abs_diff_eq!(radius, 0.4 / rate, epsilon = 1e-12);
        assert_abs_diff_eq!(radius, 0.3755, epsilon = 1e-4);

        let dt = 0.01;
        let mut st = at_origin(0.4, psi);
        let mut travelled = 0.0;
        let circumference = std::f64::consts::TAU * radius;
        let mut max_r_err: f64 = 0.0;
        while travelled + 0.4 * dt <= circumference {
            st = step_kinematics(&st, 0.4, psi, dt, &lim);
            travelled += 0.4 * dt;
            // centre of the ideal circle is (0, R)
            max_r_err = max_r_err.max((st.x.hypot(st.y - radius) - radius).abs());
        }
        let miss = st.x.hypot(st.y);
        assert!(miss < 0.01 * circumference, "endpoint misses start by {miss}");
        assert!(max_r_err < 0.01 * radius, "radius drift {max_r_err}");
    }

    #[test]
    fn steer_rate_saturates() {
        let lim = VehicleLimits::minicar();
        let (psi, _) = clamp_actuation(0.0, 1.0, 0.0, 0.0, 0.01, &lim);
        assert_abs_diff_eq!(psi, lim.max_steer_rate * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn reachable_commands_pass_through() {
        let lim = VehicleLimits::minicar();
        assert_eq!(clamp_actuation(0.1, 0.105, 0.405, 0.4, 0.01, &lim), (0.105, 0.405));
    }

    #[test]
    fn speed_cap() {
        let lim = VehicleLimits::minicar();
        let (_, v) = clamp_actuation(0.0, 0.0, 2.0, 1.495, 0.01, &lim);
        assert!(v <= 1.5);
        assert_eq!(v, 1.5);
    }

    #[test]
    fn servo_preset_keeps_measured_rate() {
        assert_eq!(VehicleLimits::minicar_servo().max_steer_rate, 0.076);
        assert!(VehicleLimits::minicar().validate().is_ok());
        let bad = VehicleLimits { max_steer: 1.6, ..VehicleLimits::minicar() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(prev_psi in -0.31f64..0.31, dpsi in -2.0f64..2.0,
                               prev_v in 0.0f64..1.5, dv in -3.0f64..3.0, dt in 0.001f64..0.1) {
            let lim = VehicleLimits::minicar();
            let (psi, v) = clamp_actuation(prev_psi, prev_psi + dpsi, prev_v + dv, prev_v, dt, &lim);
            prop_assert!((psi - prev_psi).abs() <= lim.max_steer_rate * dt + 1e-15);
            prop_assert!(psi.abs() <= lim.max_steer);
            prop_assert!((0.0..=lim.max_speed).contains(&v));
            prop_assert!((v - prev_v).abs() <= lim.max_accel.max(lim.max_decel) * dt + 1e-15);
            prop_assert_eq!(clamp_actuation(prev_psi, psi, v, prev_v, dt, &lim), (psi, v));
        }

        #[test]
        fn zero_steer_keeps_heading(v in 0.0f64..1.5, theta in -3.0f64..3.0) {
            let lim = VehicleLimits::minicar();
            let mut st = at_origin(v, 0.0);
            st.theta = theta;
            for _ in 0..50 {
                st = step_kinematics(&st, v, 0.0, 0.01, &lim);
            }
            prop_assert_eq!(st.theta, theta);
        }

        #[test]
        fn stepping_is_deterministic(v in 0.0f64..1.5, psi in -0.3f64..0.3, cv in 0.0f64..1.5, cp in -0.3f64..0.3) {
            let lim = VehicleLimits::minicar();
            let st = at_origin(v, psi);
            let a = step_kinematics(&st, cv, cp, 0.01, &lim);
            let b = step_kinematics(&st, cv, cp, 0.01, &lim);
            prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
            prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
            prop_assert_eq!(a.theta.to_bits(), b.theta.to_bits());
        }
    }
}
