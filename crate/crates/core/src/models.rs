//! Continuous-time motion models for a skid-steered platform.
//!
//! Two model families share one interface. The velocity family tracks body
//! velocity and yaw rate `[v, omega]` with terrain-dependent linear dynamics;
//! the pose family tracks planar pose `[x, y, theta]` with slip-scaled
//! unicycle kinematics. Both are driven by wheel-speed commands.

use nalgebra::{DMatrix, Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which model family a bank, trace, or scenario belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Velocity-level terrain models, state `[v, omega]`.
    Ltc,
    /// Pose-level slip models, state `[x, y, theta]`.
    Stc,
}

impl ModelFamily {
    pub fn state_dim(self) -> usize {
        match self {
            ModelFamily::Ltc => 2,
            ModelFamily::Stc => 3,
        }
    }

    pub fn state_labels(self) -> &'static [&'static str] {
        match self {
            ModelFamily::Ltc => &["v_mps", "omega_radps"],
            ModelFamily::Stc => &["x_m", "y_m", "theta_rad"],
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::Ltc => write!(f, "ltc"),
            ModelFamily::Stc => write!(f, "stc"),
        }
    }
}

/// Wheel radius and track width of a differential-drive platform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotGeometry {
    wheel_radius_m: f64,
    track_width_m: f64,
}

impl RobotGeometry {
    pub fn new(wheel_radius_m: f64, track_width_m: f64) -> Result<Self> {
        if !(wheel_radius_m > 0.0) || !wheel_radius_m.is_finite() {
            return Err(Error::InvalidParameter {
                name: "wheel_radius_m",
                message: format!("must be positive and finite, got {wheel_radius_m}"),
            });
        }
        if !(track_width_m > 0.0) || !track_width_m.is_finite() {
            return Err(Error::InvalidParameter {
                name: "track_width_m",
                message: format!("must be positive and finite, got {track_width_m}"),
            });
        }
        Ok(Self {
            wheel_radius_m,
            track_width_m,
        })
    }

    pub fn wheel_radius_m(&self) -> f64 {
        self.wheel_radius_m
    }

    pub fn track_width_m(&self) -> f64 {
        self.track_width_m
    }

    /// Maps wheel speeds `[left, right]` to ideal body rates `[v, omega]`.
    pub fn wheel_to_body_matrix(&self) -> Matrix2<f64> {
        let r = self.wheel_radius_m;
        let b = self.track_width_m;
        Matrix2::new(r / 2.0, r / 2.0, -r / b, r / b)
    }
}

/// Ideal differential-drive kinematics: wheel speeds to `(v, omega)`.
pub fn wheel_to_body(left_rad_s: f64, right_rad_s: f64, geom: &RobotGeometry) -> (f64, f64) {
    let r = geom.wheel_radius_m;
    let v = r * (left_rad_s + right_rad_s) / 2.0;
    let omega = r * (right_rad_s - left_rad_s) / geom.track_width_m;
    (v, omega)
}

/// A wheel-speed command with its ideal body-rate equivalent.
///
/// The body rates are always derived from the stored wheel speeds through
/// [`wheel_to_body`], so the two views of the command cannot drift apart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WheelCommand {
    left_rad_s: f64,
    right_rad_s: f64,
    v_mps: f64,
    omega_rad_s: f64,
}

impl WheelCommand {
    pub fn from_wheel_speeds(left_rad_s: f64, right_rad_s: f64, geom: &RobotGeometry) -> Self {
        let (v_mps, omega_rad_s) = wheel_to_body(left_rad_s, right_rad_s, geom);
        Self {
            left_rad_s,
            right_rad_s,
            v_mps,
            omega_rad_s,
        }
    }

    /// Builds the wheel command realizing the requested body rates, then
    /// re-derives the body rates from those wheels so the stored pair is
    /// exactly consistent.
    pub fn from_body(v_mps: f64, omega_rad_s: f64, geom: &RobotGeometry) -> Self {
        let r = geom.wheel_radius_m;
        let half_b = geom.track_width_m / 2.0;
        let left = (v_mps - omega_rad_s * half_b) / r;
        let right = (v_mps + omega_rad_s * half_b) / r;
        Self::from_wheel_speeds(left, right, geom)
    }

    pub fn left_rad_s(&self) -> f64 {
        self.left_rad_s
    }

    pub fn right_rad_s(&self) -> f64 {
        self.right_rad_s
    }

    /// Ideal (no-slip) forward speed implied by the wheels.
    pub fn body_speed_mps(&self) -> f64 {
        self.v_mps
    }

    /// Ideal (no-slip) yaw rate implied by the wheels.
    pub fn body_yaw_rate_rad_s(&self) -> f64 {
        self.omega_rad_s
    }

    pub fn wheel_vector(&self) -> Vector2<f64> {
        Vector2::new(self.left_rad_s, self.right_rad_s)
    }
}

/// Body velocity state `[v, omega]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct VelState {
    pub v_mps: f64,
    pub omega_rad_s: f64,
}

impl VelState {
    pub fn from_vector(x: &Vector2<f64>) -> Self {
        Self {
            v_mps: x[0],
            omega_rad_s: x[1],
        }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v_mps, self.omega_rad_s)
    }
}

/// Planar pose `[x, y, theta]`. The heading is left unwrapped; consumers
/// that need an angle difference wrap it themselves.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseState {
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
}

impl PoseState {
    pub fn from_vector(x: &Vector3<f64>) -> Self {
        Self {
            x_m: x[0],
            y_m: x[1],
            theta_rad: x[2],
        }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x_m, self.y_m, self.theta_rad)
    }
}

/// A continuous-time motion model with N-dimensional state, driven by wheel
/// commands and observed directly (identity measurement map).
pub trait MotionModel<const N: usize> {
    fn label(&self) -> &str;

    /// State derivative at `state` under command `cmd`.
    fn derivative(&self, state: &SVector<f64, N>, cmd: &WheelCommand) -> SVector<f64, N>;

    /// Jacobian of the derivative with respect to the state.
    fn jacobian(&self, state: &SVector<f64, N>, cmd: &WheelCommand) -> SMatrix<f64, N, N>;

    /// Continuous-time process noise intensity; `Q * dt` enters a discrete step.
    fn process_noise(&self) -> &SMatrix<f64, N, N>;

    /// Measurement noise covariance for this model's sensor.
    fn measurement_noise(&self) -> &SMatrix<f64, N, N>;
}

/// One forward-Euler step of a motion model: `x + f(x, cmd) * dt`.
pub fn discretize<M: MotionModel<N>, const N: usize>(
    model: &M,
    state: &SVector<f64, N>,
    cmd: &WheelCommand,
    dt: f64,
) -> Result<SVector<f64, N>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidTimeStep { dt });
    }
    if !state.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "state" });
    }
    Ok(state + model.derivative(state, cmd) * dt)
}

/// Linear terrain model for the velocity state: `d[v, omega]/dt = A x + B q`
/// with `q` the wheel speeds. Terrain enters through `A` and `B`.
#[derive(Clone, Debug)]
pub struct LtcModel {
    label: String,
    a: Matrix2<f64>,
    b: Matrix2<f64>,
    q: Matrix2<f64>,
    r: Matrix2<f64>,
}

impl LtcModel {
    pub fn new(
        label: impl Into<String>,
        a: Matrix2<f64>,
        b: Matrix2<f64>,
        q: Matrix2<f64>,
        r: Matrix2<f64>,
    ) -> Result<Self> {
        for (m, name) in [(&a, "A"), (&b, "B")] {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "ltc matrix",
                    message: format!("{name} has non-finite entries"),
                });
            }
        }
        check_psd(&q, "process noise")?;
        check_pd(&r, "measurement noise")?;
        Ok(Self {
            label: label.into(),
            a,
            b,
            q,
            r,
        })
    }

    /// Terrain as a first-order lag of time constant `tau_s` toward the
    /// traction-scaled ideal body rates: `A = -I/tau`,
    /// `B = (traction/tau) * T` with `T` the wheel-to-body map.
    pub fn first_order_lag(
        label: impl Into<String>,
        traction_factor: f64,
        tau_s: f64,
        geom: &RobotGeometry,
        q: Matrix2<f64>,
        r: Matrix2<f64>,
    ) -> Result<Self> {
        if !(traction_factor > 0.0 && traction_factor <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "traction_factor",
                message: format!("must lie in (0, 1], got {traction_factor}"),
            });
        }
        if !(tau_s > 0.0) || !tau_s.is_finite() {
            return Err(Error::InvalidParameter {
                name: "tau_s",
                message: format!("must be positive and finite, got {tau_s}"),
            });
        }
        let a = Matrix2::identity() * (-1.0 / tau_s);
        let b = geom.wheel_to_body_matrix() * (traction_factor / tau_s);
        Self::new(label, a, b, q, r)
    }

    pub fn a(&self) -> &Matrix2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Matrix2<f64> {
        &self.b
    }
}

impl MotionModel<2> for LtcModel {
    fn label(&self) -> &str {
        &self.label
    }

    fn derivative(&self, state: &Vector2<f64>, cmd: &WheelCommand) -> Vector2<f64> {
        self.a * state + self.b * cmd.wheel_vector()
    }

    fn jacobian(&self, _state: &Vector2<f64>, _cmd: &WheelCommand) -> Matrix2<f64> {
        self.a
    }

    fn process_noise(&self) -> &Matrix2<f64> {
        &self.q
    }

    fn measurement_noise(&self) -> &Matrix2<f64> {
        &self.r
    }
}

/// Slip-scaled unicycle model for the pose state. `k` scales the effective
/// forward speed and `m` the effective yaw rate, both in (0, 1].
#[derive(Clone, Debug)]
pub struct StcModel {
    label: String,
    k: f64,
    m: f64,
    q: Matrix3<f64>,
    r: Matrix3<f64>,
}

impl StcModel {
    pub fn new(
        label: impl Into<String>,
        k: f64,
        m: f64,
        q: Matrix3<f64>,
        r: Matrix3<f64>,
    ) -> Result<Self> {
        for (v, name) in [(k, "k"), (m, "m")] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "slip coefficient",
                    message: format!("{name} must lie in (0, 1], got {v}"),
                });
            }
        }
        check_psd(&q, "process noise")?;
        check_pd(&r, "measurement noise")?;
        Ok(Self {
            label: label.into(),
            k,
            m,
            q,
            r,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn m(&self) -> f64 {
        self.m
    }
}

impl MotionModel<3> for StcModel {
    fn label(&self) -> &str {
        &self.label
    }

    fn derivative(&self, state: &Vector3<f64>, cmd: &WheelCommand) -> Vector3<f64> {
        let theta = state[2];
        let u1 = cmd.body_speed_mps();
        let u2 = cmd.body_yaw_rate_rad_s();
        Vector3::new(
            self.k * theta.cos() * u1,
            self.k * theta.sin() * u1,
            self.m * u2,
        )
    }

    fn jacobian(&self, state: &Vector3<f64>, cmd: &WheelCommand) -> Matrix3<f64> {
        let theta = state[2];
        let u1 = cmd.body_speed_mps();
        let mut j = Matrix3::zeros();
        j[(0, 2)] = -self.k * theta.sin() * u1;
        j[(1, 2)] = self.k * theta.cos() * u1;
        j
    }

    fn process_noise(&self) -> &Matrix3<f64> {
        &self.q
    }

    fn measurement_noise(&self) -> &Matrix3<f64> {
        &self.r
    }
}

const SYMMETRY_TOL: f64 = 1e-9;

fn to_dynamic<const N: usize>(m: &SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_iterator(N, N, m.iter().copied())
}

pub(crate) fn from_dynamic<const N: usize>(d: &DMatrix<f64>) -> SMatrix<f64, N, N> {
    SMatrix::from_iterator(d.iter().copied())
}

fn check_symmetric<const N: usize>(m: &SMatrix<f64, N, N>, name: &'static str) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter {
            name,
            message: "has non-finite entries".into(),
        });
    }
    let scale = 1.0 + m.amax();
    for i in 0..N {
        for j in (i + 1)..N {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("not symmetric at ({i}, {j})"),
                });
            }
        }
    }
    Ok(())
}

/// Covariance that may be singular (including exactly zero) but not
/// indefinite.
pub(crate) fn check_psd<const N: usize>(m: &SMatrix<f64, N, N>, name: &'static str) -> Result<()> {
    check_symmetric(m, name)?;
    let min_eig = to_dynamic(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidParameter {
            name,
            message: format!("not positive semidefinite (min eigenvalue {min_eig:.3e})"),
        });
    }
    Ok(())
}

pub(crate) fn check_pd<const N: usize>(m: &SMatrix<f64, N, N>, name: &'static str) -> Result<()> {
    check_symmetric(m, name)?;
    if to_dynamic(m).cholesky().is_none() {
        return Err(Error::InvalidParameter {
            name,
            message: "not positive definite".into(),
        });
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix for noise sampling. Eigenvalues are
/// clamped at zero, so an exactly zero covariance yields exactly zero noise.
pub(crate) fn psd_sqrt<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let eig = to_dynamic(m).symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(c).scale_mut(s);
    }
    from_dynamic(&scaled)
}
