//! Collision geometry and run statistics: checkpoint throughput and queues.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleLimits, VehicleState};

/// Oriented rectangle footprint of a vehicle body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub cx: f64,
    pub cy: f64,
    pub theta: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    /// Body centered half a wheelbase ahead of the rear axle.
    pub fn of(state: &VehicleState, limits: &VehicleLimits) -> Self {
        let h = limits.wheelbase / 2.0;
        Self {
            cx: state.x + h * state.theta.cos(),
            cy: state.y + h * state.theta.sin(),
            theta: state.theta,
            length: limits.body_length,
            width: limits.body_width,
        }
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
            .map(|(dx, dy)| (self.cx + c * dx - s * dy, self.cy + s * dx + c * dy))
    }

    /// Strict interior containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        u.abs() < self.length / 2.0 && v.abs() < self.width / 2.0
    }

    fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

/// Separating-axis test with open semantics: rectangles that only touch
/// along an edge or at a corner do not overlap.
pub fn footprints_overlap(a: &Footprint, b: &Footprint) -> bool {
    if (a.cx - b.cx).hypot(a.cy - b.cy) >= a.circumradius() + b.circumradius() {
        return false;
    }
    let (ca, cb) = (a.corners(), b.corners());
    for theta in [a.theta, b.theta] {
        let (sin, cos) = theta.sin_cos();
        for (ax, ay) in [(cos, sin), (-sin, cos)] {
            let project = |pts: &[(f64, f64); 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                    let p = x * ax + y * ay;
                    (lo.min(p), hi.max(p))
                })
            };
            let (alo, ahi) = project(&ca);
            let (blo, bhi) = project(&cb);
            if ahi <= blo || bhi <= alo {
                return false;
            }
        }
    }
    true
}

/// All overlapping pairs `(i, j)` with `i < j`.
pub fn detect_collisions(states: &[VehicleState], limits: &VehicleLimits) -> Vec<(usize, usize)> {
    let fps: Vec<Footprint> = states.iter().map(|s| Footprint::of(s, limits)).collect();
    let mut out = Vec::new();
    for i in 0..fps.len() {
        for j in i + 1..fps.len() {
            if footprints_overlap(&fps[i], &fps[j]) {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    /// Cars per second.
    pub mean: f64,
    pub std: f64,
    pub window: f64,
    pub windows: usize,
}

impl fmt::Display for ThroughputResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-window crossing rates over `[warmup, t_end]`, windows starting every
/// `step` seconds. Window `k` counts crossings in `[t0, t0 + window)`.
pub fn window_rates(crossing_times: &[f64], t_end: f64, warmup: f64, window: f64, step: f64) -> Vec<f64> {
    let mut times = crossing_times.to_vec();
    times.sort_by(f64::total_cmp);
    let mut rates = Vec::new();
    let eps = 1e-9;
    let mut k = 0u64;
    loop {
        let t0 = warmup + k as f64 * step;
        let t1 = t0 + window;
        if t1 > t_end + eps {
            break;
        }
        let lo = times.partition_point(|&t| t < t0 - eps);
        let hi = times.partition_point(|&t| t < t1 - eps);
        rates.push((hi - lo) as f64 / window);
        k += 1;
    }
    rates
}

pub fn throughput_from_crossings(
    crossing_times: &[f64],
    t_end: f64,
    warmup: f64,
    window: f64,
    step: f64,
) -> ThroughputResult {
    let rates = window_rates(crossing_times, t_end, warmup, window, step);
    let (mean, std) = mean_std(&rates);
    ThroughputResult { mean, std, window, windows: rates.len() }
}

/// Forward passages of a checkpoint, detected from consecutive normalized
/// positions `q` in [0, 1) measured from the checkpoint: a wrap from the last
/// quarter to the first quarter is one crossing.
pub fn is_crossing(q_prev: f64, q_now: f64) -> bool {
    q_prev > 0.75 && q_now < 0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueueStats {
    /// Largest number of simultaneously waiting vehicles.
    pub max_queue: usize,
    /// Time integral of the waiting count (vehicle-seconds).
    pub waiting_vehicle_seconds: f64,
}
