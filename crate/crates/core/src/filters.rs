//! Model-matched Kalman filtering on a forward-Euler discretization.
//!
//! Both model families share one predict/update pair: the linear velocity
//! models use their constant dynamics matrix as the transition Jacobian,
//! the pose models linearize about the current estimate. Measurements
//! observe the full state directly, so the measurement matrix is the
//! identity throughout.

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::models::{discretize, LtcModel, MotionModel, StcModel, WheelCommand};

/// Lower bound applied to model likelihoods so that a wildly mismatched
/// model cannot zero out its mode weight entirely.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Whether an estimate has been through the measurement update for its
/// time stamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Prior,
    Posterior,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Prior => "prior",
            Phase::Posterior => "posterior",
        }
    }
}

/// Gaussian state estimate tagged with its place in the predict/update cycle.
#[derive(Clone, Copy, Debug)]
pub struct FilterState<const N: usize> {
    x: SVector<f64, N>,
    cov: SMatrix<f64, N, N>,
    phase: Phase,
}

impl<const N: usize> FilterState<N> {
    pub fn posterior(x: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Self {
        Self {
            x,
            cov: symmetrize(&cov),
            phase: Phase::Posterior,
        }
    }

    pub fn prior(x: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Self {
        Self {
            x,
            cov: symmetrize(&cov),
            phase: Phase::Prior,
        }
    }

    pub fn state(&self) -> &SVector<f64, N> {
        &self.x
    }

    pub fn covariance(&self) -> &SMatrix<f64, N, N> {
        &self.cov
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub(crate) fn expect_phase(&self, want: Phase) -> Result<()> {
        if self.phase == want {
            Ok(())
        } else {
            Err(Error::WrongPhase {
                expected: want.name(),
                got: self.phase.name(),
            })
        }
    }
}

/// A full-state measurement stamped with its sample time.
#[derive(Clone, Copy, Debug)]
pub struct Measurement<const N: usize> {
    value: SVector<f64, N>,
    time_s: f64,
}

impl<const N: usize> Measurement<N> {
    pub fn new(value: SVector<f64, N>, time_s: f64) -> Result<Self> {
        if !value.iter().all(|v| v.is_finite()) || !time_s.is_finite() {
            return Err(Error::NonFinite {
                context: "measurement",
            });
        }
        Ok(Self { value, time_s })
    }

    pub fn value(&self) -> &SVector<f64, N> {
        &self.value
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }
}

/// Result of one measurement update.
#[derive(Clone, Copy, Debug)]
pub struct UpdateOutcome<const N: usize> {
    pub posterior: FilterState<N>,
    pub innovation: SVector<f64, N>,
    pub innovation_cov: SMatrix<f64, N, N>,
    pub likelihood: f64,
}

pub(crate) fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Propagates a posterior estimate one step forward under `model`.
///
/// The mean moves by one Euler step; the covariance uses the first-order
/// transition `I + J dt` with the Jacobian evaluated at the incoming mean,
/// plus `Q dt` of process noise.
pub fn predict<M: MotionModel<N>, const N: usize>(
    posterior: &FilterState<N>,
    model: &M,
    cmd: &WheelCommand,
    dt: f64,
) -> Result<FilterState<N>> {
    posterior.expect_phase(Phase::Posterior)?;
    if !posterior.cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "covariance",
        });
    }
    if !cmd.left_rad_s().is_finite() || !cmd.right_rad_s().is_finite() {
        return Err(Error::NonFinite { context: "command" });
    }
    let x_pred = discretize(model, &posterior.x, cmd, dt)?;
    if !x_pred.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "predicted state",
        });
    }
    let phi = SMatrix::<f64, N, N>::identity() + model.jacobian(&posterior.x, cmd) * dt;
    let cov = phi * posterior.cov * phi.transpose() + model.process_noise() * dt;
    Ok(FilterState::prior(x_pred, cov))
}

/// Prediction step for a velocity-family filter.
pub fn kf_predict(
    posterior: &FilterState<2>,
    model: &LtcModel,
    cmd: &WheelCommand,
    dt: f64,
) -> Result<FilterState<2>> {
    predict(posterior, model, cmd, dt)
}

/// Prediction step for a pose-family filter (extended form; the transition
/// Jacobian is re-linearized at the current mean every step).
pub fn ekf_predict(
    posterior: &FilterState<3>,
    model: &StcModel,
    cmd: &WheelCommand,
    dt: f64,
) -> Result<FilterState<3>> {
    predict(posterior, model, cmd, dt)
}

/// Measurement update in Joseph form.
///
/// The innovation covariance `E = P + R` is factored once; the same
/// factorization drives the gain, the quadratic form, and the determinant
/// inside the likelihood.
pub fn update<const N: usize>(
    prior: &FilterState<N>,
    meas: &Measurement<N>,
    r: &SMatrix<f64, N, N>,
) -> Result<UpdateOutcome<N>> {
    prior.expect_phase(Phase::Prior)?;
    if !prior.x.iter().all(|v| v.is_finite()) || !prior.cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "prior" });
    }
    let innovation = meas.value - prior.x;
    let innovation_cov = symmetrize(&(prior.cov + r));
    let chol = Cholesky::new(innovation_cov).ok_or(Error::SingularInnovation)?;
    let likelihood = likelihood_from_cholesky(&chol, &innovation)?;

    // K = P E^-1; solve on the symmetric P to avoid forming the inverse.
    let gain = chol.solve(&prior.cov).transpose();
    let x_post = prior.x + gain * innovation;
    let ikh = SMatrix::<f64, N, N>::identity() - gain;
    let cov_post = ikh * prior.cov * ikh.transpose() + gain * r * gain.transpose();

    Ok(UpdateOutcome {
        posterior: FilterState::posterior(x_post, cov_post),
        innovation,
        innovation_cov,
        likelihood,
    })
}

/// Gaussian density of `innovation` under covariance `cov`, floored at
/// [`LIKELIHOOD_FLOOR`].
pub fn gaussian_likelihood<const N: usize>(
    innovation: &SVector<f64, N>,
    cov: &SMatrix<f64, N, N>,
) -> Result<f64> {
    if !innovation.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "likelihood input",
        });
    }
    let chol = Cholesky::new(*cov).ok_or(Error::SingularInnovation)?;
    likelihood_from_cholesky(&chol, innovation)
}

fn likelihood_from_cholesky<const N: usize>(
    chol: &Cholesky<f64, nalgebra::Const<N>>,
    innovation: &SVector<f64, N>,
) -> Result<f64> {
    let mahal = innovation.dot(&chol.solve(innovation));
    let norm = (std::f64::consts::TAU.powi(N as i32) * chol.determinant()).sqrt();
    let density = (-0.5 * mahal).exp() / norm;
    if !density.is_finite() {
        return Err(Error::NonFinite {
            context: "likelihood",
        });
    }
    Ok(density.max(LIKELIHOOD_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RobotGeometry;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{Matrix1, Matrix2, Matrix3, Vector1, Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn geom() -> RobotGeometry {
        RobotGeometry::new(0.165, 0.555).unwrap()
    }

    fn asphalt_like() -> LtcModel {
        LtcModel::first_order_lag(
            "asphalt",
            0.95,
            0.15,
            &geom(),
            Matrix2::identity() * 1e-3,
            Matrix2::identity() * 2.5e-3,
        )
        .unwrap()
    }

    #[test]
    fn kf_predict_matches_hand_computed_step() {
        let model = asphalt_like();
        let cmd = WheelCommand::from_wheel_speeds(3.0, 3.0, &geom());
        let post = FilterState::posterior(
            Vector2::new(0.4, 0.2),
            Matrix2::new(0.02, 0.005, 0.005, 0.01),
        );
        let prior = kf_predict(&post, &model, &cmd, 0.05).unwrap();
        // Scalar oracle: dv = -0.4/0.15 + (0.95/0.15)*0.165*3,
        // domega = -0.2/0.15; Phi = (1 - dt/tau) I; P- = Phi P Phi' + Q dt.
        assert_relative_eq!(prior.state()[0], 0.42341666666666666, max_relative = 1e-12);
        assert_relative_eq!(prior.state()[1], 0.1333333333333333, max_relative = 1e-12);
        let p = prior.covariance();
        assert_relative_eq!(p[(0, 0)], 0.008938888888888889, max_relative = 1e-12);
        assert_relative_eq!(p[(0, 1)], 0.0022222222222222222, max_relative = 1e-12);
        assert_relative_eq!(p[(1, 1)], 0.004494444444444444, max_relative = 1e-12);
        assert_eq!(p[(0, 1)], p[(1, 0)]);
        assert_eq!(prior.phase(), Phase::Prior);
    }

    #[test]
    fn ekf_predict_leaks_heading_uncertainty_downrange() {
        let model = StcModel::new(
            "baseline",
            1.0,
            1.0,
            Matrix3::zeros(),
            Matrix3::identity() * 0.09,
        )
        .unwrap();
        let cmd = WheelCommand::from_body(0.5, 0.0, &geom());
        let u1 = cmd.body_speed_mps();
        let dt = 0.1;
        let sigma_theta2 = 0.09;
        let post = FilterState::posterior(
            Vector3::zeros(),
            Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, sigma_theta2)),
        );
        let prior = ekf_predict(&post, &model, &cmd, dt).unwrap();
        let p = prior.covariance();
        // Heading uncertainty couples into the cross-track position at
        // heading zero; along-track stays exact.
        assert_abs_diff_eq!(p[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(p[(1, 1)], (u1 * dt).powi(2) * sigma_theta2, max_relative = 1e-12);
        assert_relative_eq!(p[(1, 2)], u1 * dt * sigma_theta2, max_relative = 1e-12);
        assert_relative_eq!(p[(2, 2)], sigma_theta2, max_relative = 1e-12);
    }

    #[test]
    fn predict_rejects_prior_input_and_bad_dt() {
        let model = asphalt_like();
        let cmd = WheelCommand::from_wheel_speeds(1.0, 1.0, &geom());
        let prior = FilterState::prior(Vector2::zeros(), Matrix2::identity());
        assert!(matches!(
            kf_predict(&prior, &model, &cmd, 0.05),
            Err(Error::WrongPhase { .. })
        ));
        let post = FilterState::posterior(Vector2::zeros(), Matrix2::identity());
        assert!(matches!(
            kf_predict(&post, &model, &cmd, 0.0),
            Err(Error::InvalidTimeStep { .. })
        ));
    }

    #[test]
    fn update_with_equal_trust_splits_the_innovation() {
        let prior = FilterState::prior(Vector2::zeros(), Matrix2::identity());
        let meas = Measurement::new(Vector2::new(1.0, -1.0), 0.0).unwrap();
        let out = update(&prior, &meas, &Matrix2::identity()).unwrap();
        // P = R = I makes the gain 1/2 up to the factored solve's rounding.
        assert_abs_diff_eq!(out.posterior.state()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out.posterior.state()[1], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out.posterior.covariance()[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out.posterior.covariance()[(1, 1)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out.posterior.covariance()[(0, 1)], 0.0, epsilon = 1e-14);
        assert_eq!(out.posterior.phase(), Phase::Posterior);
    }

    #[test]
    fn update_rejects_posterior_input() {
        let post = FilterState::posterior(Vector2::zeros(), Matrix2::identity());
        let meas = Measurement::new(Vector2::zeros(), 0.0).unwrap();
        assert!(matches!(
            update(&post, &meas, &Matrix2::identity()),
            Err(Error::WrongPhase { .. })
        ));
    }

    #[test]
    fn update_flags_singular_innovation_covariance() {
        let prior = FilterState::prior(Vector2::zeros(), Matrix2::zeros());
        let meas = Measurement::new(Vector2::zeros(), 0.0).unwrap();
        assert!(matches!(
            update(&prior, &meas, &Matrix2::zeros()),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn update_likelihood_equals_standalone_evaluation() {
        let prior = FilterState::prior(
            Vector2::new(0.2, -0.1),
            Matrix2::new(0.04, 0.01, 0.01, 0.03),
        );
        let meas = Measurement::new(Vector2::new(0.35, 0.05), 1.0).unwrap();
        let r = Matrix2::identity() * 0.0025;
        let out = update(&prior, &meas, &r).unwrap();
        let standalone = gaussian_likelihood(&out.innovation, &out.innovation_cov).unwrap();
        assert_eq!(out.likelihood, standalone);
    }

    #[test]
    fn gaussian_likelihood_standard_bivariate_peak() {
        let lik = gaussian_likelihood(&Vector2::zeros(), &Matrix2::identity()).unwrap();
        assert_relative_eq!(lik, 0.15915494309189535, max_relative = 1e-14);
    }

    #[test]
    fn gaussian_likelihood_scalar_peak() {
        let lik = gaussian_likelihood(&Vector1::new(0.0), &Matrix1::new(4.0)).unwrap();
        assert_relative_eq!(lik, 0.19947114020071635, max_relative = 1e-14);
    }

    #[test]
    fn gaussian_likelihood_floors_instead_of_underflowing() {
        let lik = gaussian_likelihood(&Vector2::new(1e6, -1e6), &Matrix2::identity()).unwrap();
        assert_eq!(lik, LIKELIHOOD_FLOOR);
    }

    #[test]
    fn gaussian_likelihood_rejects_indefinite_covariance() {
        let e = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(matches!(
            gaussian_likelihood(&Vector2::zeros(), &e),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn gaussian_likelihood_integrates_to_one() {
        // Trapezoid quadrature over +-8 sigma in one dimension.
        let var = 0.25_f64;
        let sigma = var.sqrt();
        let n = 4000;
        let lo = -8.0 * sigma;
        let hi = 8.0 * sigma;
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let nu = lo + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * gaussian_likelihood(&Vector1::new(nu), &Matrix1::new(var)).unwrap();
        }
        total *= h;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn joseph_form_agrees_with_simple_form_and_stays_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = Matrix2::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0);
            let p = m * m.transpose() + Matrix2::identity() * 1e-6;
            let rm = Matrix2::from_fn(|_, _| rng.random::<f64>() * 0.2 - 0.1);
            let r = rm * rm.transpose() + Matrix2::identity() * 1e-3;
            let x = Vector2::new(rng.random::<f64>(), rng.random::<f64>());
            let y = Vector2::new(rng.random::<f64>(), rng.random::<f64>());

            let prior = FilterState::prior(x, p);
            let meas = Measurement::new(y, 0.0).unwrap();
            let out = update(&prior, &meas, &r).unwrap();

            let e_inv = out.innovation_cov.try_inverse().unwrap();
            let gain = p * e_inv;
            let simple = (Matrix2::identity() - gain) * p;
            assert_relative_eq!(
                out.posterior.covariance(),
                &symmetrize(&simple),
                epsilon = 1e-10,
                max_relative = 1e-7
            );

            let eig = out.posterior.covariance().symmetric_eigen().eigenvalues;
            assert!(eig.min() > -1e-12, "posterior covariance went indefinite");
        }
    }
}
