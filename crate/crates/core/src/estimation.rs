//! Emulated motion-capture feed and the per-vehicle extended Kalman filter.
//!
//! Only the pose is measured; speed and steering angle are inferred from
//! motion through the bicycle model.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_pose, VehicleState};
use crate::tracking::normalize_angle;

pub type Vector5 = SVector<f64, 5>;
pub type Matrix5 = SMatrix<f64, 5, 5>;
type Matrix3x5 = SMatrix<f64, 3, 5>;
type Matrix5x3 = SMatrix<f64, 5, 3>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMeasurement {
    pub vehicle: usize,
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingMode {
    /// Controllers read ground truth.
    Oracle,
    /// Controllers read EKF estimates fed by noisy pose measurements.
    #[default]
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingParams {
    pub mode: SensingMode,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    /// Diagonal of the process noise for `[x, y, theta, v, psi]`.
    pub q: [f64; 5],
    /// Diagonal of the measurement noise for `[x, y, theta]`.
    pub r: [f64; 3],
}

impl Default for SensingParams {
    fn default() -> Self {
        Self {
            mode: SensingMode::Estimated,
            sigma_xy: 0.001,
            sigma_theta: 0.003,
            q: [1e-6, 1e-6, 1e-6, 1e-4, 1e-4],
            r: [1e-6, 1e-6, 1e-5],
        }
    }
}

impl SensingParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_xy >= 0.0 && self.sigma_theta >= 0.0) {
            return Err("noise standard deviations must be >= 0".into());
        }
        if self.q.iter().any(|&q| !(q >= 0.0)) {
            return Err("process noise entries must be >= 0".into());
        }
        if self.r.iter().any(|&r| !(r > 0.0)) {
            return Err("measurement noise entries must be > 0".into());
        }
        Ok(())
    }

    pub fn process_noise(&self) -> Matrix5 {
        Matrix5::from_diagonal(&Vector5::from(self.q))
    }

    pub fn measurement_noise(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.r))
    }
}

/// Adds zero-mean Gaussian noise to the true pose.
pub fn emulate_measurement<R: Rng + ?Sized>(
    vehicle: usize,
    timestamp: f64,
    truth: &VehicleState,
    sigma_xy: f64,
    sigma_theta: f64,
    rng: &mut R,
) -> PoseMeasurement {
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let nt: f64 = rng.sample(StandardNormal);
    PoseMeasurement {
        vehicle,
        timestamp,
        x: truth.x + sigma_xy * nx,
        y: truth.y + sigma_xy * ny,
        theta: normalize_angle(truth.theta + sigma_theta * nt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    /// `[x, y, theta, v, psi]`
    pub mean: Vector5,
    pub cov: Matrix5,
}

impl EstimatorState {
    pub fn new(mean: Vector5, cov: Matrix5) -> Self {
        Self { mean, cov }
    }

    /// Starts from a known state with a small diagonal uncertainty.
    pub fn from_state(s: &VehicleState, variance: [f64; 5]) -> Self {
        Self {
            mean: Vector5::new(s.x, s.y, s.theta, s.v, s.psi),
            cov: Matrix5::from_diagonal(&Vector5::from(variance)),
        }
    }

    pub fn x(&self) -> f64 {
        self.mean[0]
    }
    pub fn y(&self) -> f64 {
        self.mean[1]
    }
    pub fn theta(&self) -> f64 {
        self.mean[2]
    }
    pub fn v(&self) -> f64 {
        self.mean[3]
    }
    pub fn psi(&self) -> f64 {
        self.mean[4]
    }
}

/// Bicycle-model propagation with speed and steering held.
pub fn propagate(mean: &Vector5, dt: f64, wheelbase: f64) -> Vector5 {
    let (x, y, theta) = integrate_pose(mean[0], mean[1], mean[2], mean[3], mean[4], dt, wheelbase);
    Vector5::new(x, y, theta, mean[3], mean[4])
}

/// Jacobian of [`propagate`] with respect to the state.
pub fn propagation_jacobian(mean: &Vector5, dt: f64, wheelbase: f64) -> Matrix5 {
    let (theta, v, psi) = (mean[2], mean[3], mean[4]);
    let (s, c) = theta.sin_cos();
    let sec2 = 1.0 / psi.cos().powi(2);
    let mut f = Matrix5::identity();
    f[(0, 2)] = -v * s * dt;
    f[(0, 3)] = c * dt;
    f[(1, 2)] = v * c * dt;
    f[(1, 3)] = s * dt;
    f[(2, 3)] = psi.tan() / wheelbase * dt;
    f[(2, 4)] = v * sec2 / wheelbase * dt;
    f
}

pub fn ekf_predict(est: &EstimatorState, dt: f64, wheelbase: f64, q: &Matrix5) -> EstimatorState {
    let f = propagation_jacobian(&est.mean, dt, wheelbase);
    let cov = f * est.cov * f.transpose() + q;
    EstimatorState { mean: propagate(&est.mean, dt, wheelbase), cov: symmetrize(&cov) }
}

/// Pose update with an angle-wrapped heading innovation. Uses the Joseph
/// form and re-symmetrizes so the covariance stays PSD.
pub fn ekf_update(est: &EstimatorState, meas: &PoseMeasurement, r: &Matrix3<f64>) -> EstimatorState {
    let h = Matrix3x5::from_fn(|i, j| if i == j { 1.0 } else { 0.0 });
    let innovation =
        Vector3::new(meas.x - est.mean[0], meas.y - est.mean[1], normalize_angle(meas.theta - est.mean[2]));
    let s = h * est.cov * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return *est;
    };
    let k: Matrix5x3 = est.cov * h.transpose() * s_inv;
    let mut mean = est.mean + k * innovation;
    mean[2] = normalize_angle(mean[2]);
    let ikh = Matrix5::identity() - k * h;
    let cov = ikh * est.cov * ikh.transpose() + k * r * k.transpose();
    EstimatorState { mean, cov: symmetrize(&cov) }
}

fn symmetrize(m: &Matrix5) -> Matrix5 {
    (m + m.transpose()) * 0.5
}
