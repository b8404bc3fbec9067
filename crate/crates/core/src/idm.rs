//! Intelligent Driver Model with an escape-distance jam adaptation, plus the
//! cooperative variant that reacts to weighted virtual vehicles.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Time headway (s).
    pub time_headway: f64,
    /// Maximum acceleration (m/s^2).
    pub alpha: f64,
    /// Comfortable deceleration (m/s^2).
    pub beta: f64,
    pub delta: f64,
    /// Jam distance (m).
    pub s0: f64,
}

impl IdmParams {
    pub fn normal() -> Self {
        Self { v0: 0.4, time_headway: 2.0, alpha: 0.5, beta: 0.3, delta: 4.0, s0: 0.1 }
    }

    pub fn aggressive() -> Self {
        Self { alpha: 1.0, beta: 0.5, ..Self::normal() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("v0", self.v0),
            ("time_headway", self.time_headway),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
            ("s0", self.s0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.delta < 1.0 {
            return Err(format!("delta must be >= 1, got {}", self.delta));
        }
        Ok(())
    }
}

/// A leader as seen by a follower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontTarget {
    /// Bumper-to-bumper gap (m).
    pub gap: f64,
    /// Follower speed minus leader speed; positive when closing.
    pub approach_rate: f64,
    pub front_speed: f64,
    pub weight: f64,
    pub is_virtual: bool,
}

impl FrontTarget {
    pub fn real(gap: f64, ego_speed: f64, front_speed: f64) -> Self {
        Self { gap, approach_rate: ego_speed - front_speed, front_speed, weight: 1.0, is_virtual: false }
    }

    pub fn virtual_vehicle(gap: f64, ego_speed: f64, front_speed: f64, weight: f64) -> Self {
        Self { gap, approach_rate: ego_speed - front_speed, front_speed, weight, is_virtual: true }
    }
}

/// Desired dynamic gap, floored at the jam distance `jam`.
pub fn desired_gap_with(v: f64, approach_rate: f64, params: &IdmParams, jam: f64) -> f64 {
    let s = jam + params.time_headway * v + v * approach_rate / (2.0 * (params.alpha * params.beta).sqrt());
    s.max(jam)
}

pub fn desired_gap(v: f64, approach_rate: f64, params: &IdmParams) -> f64 {
    desired_gap_with(v, approach_rate, params, params.s0)
}

/// Extra jam distance that leaves room to steer around a slow leader.
/// Smoothstep in the speed ratio: `2L` behind a standing car, zero once the
/// leader reaches the desired speed.
pub fn escape_distance(front_speed: f64, v0: f64, wheelbase: f64) -> f64 {
    let r = front_speed / v0;
    if r > 1.0 {
        0.0
    } else {
        2.0 * wheelbase * (2.0 * r.powi(3) - 3.0 * r.powi(2) + 1.0)
    }
}

pub fn effective_jam_distance(params: &IdmParams, front_speed: f64, wheelbase: f64) -> f64 {
    params.s0 + escape_distance(front_speed, params.v0, wheelbase)
}

/// IDM acceleration before the actuator clamp. Without a target the gap
/// term is dropped.
pub fn idm_acceleration_raw(v: f64, target: Option<&FrontTarget>, params: &IdmParams, effective_s0: f64) -> f64 {
    let free = 1.0 - (v / params.v0).powf(params.delta);
    let interaction = match target {
        Some(t) => {
            let s_star = desired_gap_with(v, t.approach_rate, params, effective_s0);
            (s_star / t.gap).powi(2)
        }
        None => 0.0,
    };
    params.alpha * (free - interaction)
}

/// IDM acceleration clamped to `[-max_decel, alpha]`.
pub fn idm_acceleration(
    v: f64,
    target: Option<&FrontTarget>,
    params: &IdmParams,
    effective_s0: f64,
    max_decel: f64,
) -> f64 {
    idm_acceleration_raw(v, target, params, effective_s0).clamp(-max_decel, params.alpha)
}

/// Cooperative IDM: the smaller of the weighted reaction to a virtual leader
/// and the plain reaction to the real leader.
pub fn cidm_acceleration(
    v: f64,
    real_front: Option<&FrontTarget>,
    virtual_front: Option<&FrontTarget>,
    params: &IdmParams,
    real_s0: f64,
    virtual_s0: f64,
    max_decel: f64,
) -> f64 {
    let a_real = idm_acceleration(v, real_front, params, real_s0, max_decel);
    match virtual_front {
        Some(vf) => {
            let a_virt = idm_acceleration(v, Some(vf), params, virtual_s0, max_decel);
            (vf.weight * a_virt).min(a_real)
        }
        None => a_real,
    }
}

/// Desired speed raised to clear room for a virtual vehicle behind.
/// Never below `v0`, never above `max_speed`.
pub fn boosted_desired_speed(v0: f64, weight: f64, trail_gap: f64, range: f64, max_speed: f64) -> f64 {
    let boosted = v0 * (1.0 + weight * (range - trail_gap) / range);
    boosted.max(v0).min(max_speed)
}
