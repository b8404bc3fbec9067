//! Inner-loop control: lateral path tracking and the velocity PID.
//!
//! The lateral law places a reference car on the closest path point, steers
//! it along the local curvature, and aims the real car's front point at a
//! target ahead of the reference car. The resulting steering command does not
//! depend on speed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleLimits;
use crate::error::TrackError;
use crate::track::{Lane, ReferenceProjection};

/// Anything a vehicle can be projected onto for tracking.
pub trait ReferencePath {
    fn project(&self, x: f64, y: f64) -> Result<ReferenceProjection, TrackError>;
}

impl ReferencePath for Lane {
    fn project(&self, x: f64, y: f64) -> Result<ReferenceProjection, TrackError> {
        Lane::project(self, x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerParams {
    pub l1: f64,
    pub l2: f64,
}

impl TrackerParams {
    pub fn for_wheelbase(wheelbase: f64) -> Self {
        Self { l1: wheelbase, l2: 2.3 * wheelbase }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
}

impl Default for PidParams {
    fn default() -> Self {
        Self { kp: 4.0, ki: 0.5, kd: 0.0, integral_limit: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Steering angle whose turning radius matches the path curvature.
pub fn reference_steering(kappa: f64, l1: f64) -> f64 {
    (l1 * kappa).atan()
}

pub fn target_point(proj: &ReferenceProjection, psi_d: f64, params: &TrackerParams) -> (f64, f64) {
    let th = proj.theta_d;
    (
        proj.x_d + params.l1 * th.cos() + params.l2 * (th + psi_d).cos(),
        proj.y_d + params.l1 * th.sin() + params.l2 * (th + psi_d).sin(),
    )
}

/// Steering command for a vehicle at `(x, y)` with heading `theta` chasing
/// the target `(x_t, y_t)`. Normalized to (-pi, pi]; actuator limits apply
/// downstream.
pub fn steering_command(x: f64, y: f64, theta: f64, x_t: f64, y_t: f64, params: &TrackerParams) -> f64 {
    let (dx, dy) = (x_t - x, y_t - y);
    let psi = (dy - params.l1 * theta.sin()).atan2(dx - params.l1 * theta.cos()) - theta;
    normalize_angle(psi)
}

/// Full lateral law against a reference path. Returns the steering command
/// and the projection used.
pub fn track_path<P: ReferencePath + ?Sized>(
    path: &P,
    x: f64,
    y: f64,
    theta: f64,
    params: &TrackerParams,
) -> Result<(f64, ReferenceProjection), TrackError> {
    let proj = path.project(x, y)?;
    let psi_d = reference_steering(proj.kappa, params.l1);
    let (xt, yt) = target_point(&proj, psi_d, params);
    Ok((steering_command(x, y, theta, xt, yt, params), proj))
}

/// Velocity PID with a clamped integral. Output is an acceleration command
/// limited to the vehicle's acceleration envelope; the integral is frozen
/// while the output saturates.
pub fn velocity_pid(
    v_measured: f64,
    v_setpoint: f64,
    state: &mut PidState,
    params: &PidParams,
    dt: f64,
    limits: &VehicleLimits,
) -> f64 {
    let error = v_setpoint - v_measured;
    let integral = (state.integral + error * dt).clamp(-params.integral_limit, params.integral_limit);
    let derivative = state.prev_error.map_or(0.0, |prev| (error - prev) / dt);
    state.prev_error = Some(error);
    let raw = params.kp * error + params.ki * integral + params.kd * derivative;
    let out = raw.clamp(-limits.max_decel, limits.max_accel);
    if out == raw {
        state.integral = integral;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_kinematics, VehicleState};
    use crate::track::{build_track, TrackSpec};
    use approx::assert_abs_diff_eq;

    fn params() -> TrackerParams {
        TrackerParams::for_wheelbase(0.122)
    }

    fn proj_at(x: f64, y: f64, theta: f64) -> ReferenceProjection {
        ReferenceProjection { s_d: 0.0, x_d: x, y_d: y, theta_d: theta, kappa: 0.0, lateral_error: 0.0 }
    }

    #[test]
    fn reference_steering_examples() {
        assert_eq!(reference_steering(0.0, 0.122), 0.0);
        assert_abs_diff_eq!(reference_steering(1.0 / 0.56, 0.122), 0.2146, epsilon = 1e-4);
        assert!(reference_steering(1e300, 0.122) <= PI / 2.0);
        assert_abs_diff_eq!(reference_steering(f64::INFINITY, 0.122), PI / 2.0);
        assert_abs_diff_eq!(reference_steering(f64::NEG_INFINITY, 0.122), -PI / 2.0);
    }

    #[test]
    fn target_point_examples() {
        let p = params();
        assert_abs_diff_eq!(p.l2, 0.2806, epsilon = 1e-12);
        let (x, y) = target_point(&proj_at(0.0, 0.0, 0.0), 0.0, &p);
        assert_abs_diff_eq!(x, 0.4026, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-15);

        let (x, y) = target_point(&proj_at(0.0, 0.0, PI / 2.0), 0.0, &p);
        assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, p.l1 + p.l2, epsilon = 1e-12);

        let (x, y) = target_point(&proj_at(0.0, 0.0, 0.0), 0.2146, &p);
        assert_abs_diff_eq!(x, 0.122 + 0.2806 * 0.2146f64.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.2806 * 0.2146f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn steering_command_examples() {
        let p = params();
        assert_eq!(steering_command(0.0, 0.0, 0.0, 1.0, 0.0, &p), 0.0);
        assert_abs_diff_eq!(steering_command(0.0, 0.0, 0.0, p.l1, 0.1, &p), PI / 2.0, epsilon = 1e-15);
        let up = steering_command(0.0, 0.0, 0.0, 0.4, 0.07, &p);
        let down = steering_command(0.0, 0.0, 0.0, 0.4, -0.07, &p);
        assert_eq!(up, -down);
        // translation into the vehicle frame
        let shifted = steering_command(3.0, -2.0, 0.0, 3.4, -1.93, &p);
        assert_abs_diff_eq!(shifted, up, epsilon = 1e-12);
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn pid_examples() {
        let lim = VehicleLimits::minicar();
        let mut st = PidState::default();
        assert_eq!(velocity_pid(0.4, 0.4, &mut st, &PidParams::default(), 0.01, &lim), 0.0);

        let p_only = PidParams { kp: 1.5, ki: 0.0, kd: 0.0, integral_limit: 1.0 };
        let mut st = PidState::default();
        assert_abs_diff_eq!(velocity_pid(0.2, 0.5, &mut st, &p_only, 0.01, &lim), 1.5 * 0.3, epsilon = 1e-15);

        let i_only = PidParams { kp: 0.0, ki: 2.0, kd: 0.0, integral_limit: 0.05 };
        let mut st = PidState::default();
        let (e, dt) = (0.1, 0.01);
        let mut out = 0.0;
        for n in 1..=100 {
            out = velocity_pid(0.3, 0.3 + e, &mut st, &i_only, dt, &lim);
            let expected = 2.0 * (e * n as f64 * dt).min(0.05);
            assert_abs_diff_eq!(out, expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(out, 2.0 * 0.05, epsilon = 1e-12);
    }

    #[test]
    fn pid_settles_without_overshoot() {
        let lim = VehicleLimits::minicar();
        let mut st = PidState::default();
        let params = PidParams::default();
        let (mut v, dt) = (0.0f64, 0.01);
        let mut peak: f64 = 0.0;
        for k in 0..300 {
            let a = velocity_pid(v, 0.4, &mut st, &params, dt, &lim);
            v = (v + a * dt).clamp(0.0, lim.max_speed);
            peak = peak.max(v);
            if k == 100 {
                assert!((v - 0.4).abs() < 0.02 * 0.4, "not settled after 1 s: {v}");
            }
            if k == 200 {
                assert!((v - 0.4).abs() < 0.02 * 0.4, "not settled after 2 s: {v}");
            }
        }
        assert!(peak <= 0.4 * 1.05, "overshoot {peak}");
    }

    #[test]
    fn speed_independent_steering() {
        let track = build_track(&TrackSpec::default()).unwrap();
        let lane = &track.lanes[0];
        let p = params();
        let cmds: Vec<f64> = [0.1, 0.4, 1.5]
            .iter()
            .map(|&v| {
                let st = VehicleState {
                    x: 2.0,
                    y: 0.03,
                    theta: 0.05,
                    v,
                    psi: 0.0,
                    lane: 0,
                    s: 2.0,
                    lateral: 0.03,
                    lane_change: None,
                };
                track_path(lane, st.x, st.y, st.theta, &p).unwrap().0
            })
            .collect();
        assert_eq!(cmds[0], cmds[1]);
        assert_eq!(cmds[1], cmds[2]);
    }

    #[test]
    fn converges_from_lateral_offset_on_straight() {
        let track = build_track(&TrackSpec::default()).unwrap();
        let lane = &track.lanes[0];
        let lim = VehicleLimits::minicar();
        let p = params();
        let mut st = VehicleState {
            x: 0.5,
            y: 0.05,
            theta: 0.0,
            v: 0.4,
            psi: 0.0,
            lane: 0,
            s: 0.5,
            lateral: 0.05,
            lane_change: None,
        };
        let x0 = st.x;
        let mut worst_overshoot: f64 = 0.0;
        while st.x - x0 < 2.0 {
            let (psi, _) = track_path(lane, st.x, st.y, st.theta, &p).unwrap();
            st = step_kinematics(&st, 0.4, psi, 0.01, &lim);
            worst_overshoot = worst_overshoot.max(-st.y);
        }
        assert!(st.y.abs() < 0.005, "lateral error after 2 m: {}", st.y);
        assert!(worst_overshoot <= 0.1 * 0.05, "overshoot {worst_overshoot}");
    }
}
