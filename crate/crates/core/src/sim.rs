//! Synthetic truth generation and sensor synthesis.
//!
//! Truth integrates the scheduled mode's own dynamics at a finer substep
//! than the filters run at, optionally with process noise and with the true
//! parameters jittered away from the filter bank's, so the estimator never
//! sees its exact generative model. All randomness is drawn from named
//! streams of one seeded counter-based generator: truth process noise,
//! sensor noise, and parameter jitter never share draws, so changing one
//! leaves the others untouched.

use nalgebra::{SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    check_psd, psd_sqrt, LtcModel, MotionModel, PoseState, RobotGeometry, StcModel, VelState,
    WheelCommand,
};
use crate::filters::Measurement;

const STREAM_TRUTH: u64 = 1;
const STREAM_SENSOR: u64 = 2;
const STREAM_PARAMS: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normal_vector<const N: usize>(rng: &mut ChaCha12Rng) -> SVector<f64, N> {
    SVector::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Piecewise-constant true-mode timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSchedule {
    segments: Vec<ScheduleSegment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub start_s: f64,
    pub mode: usize,
}

impl ModeSchedule {
    pub fn new(segments: Vec<ScheduleSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter {
                name: "schedule",
                message: "must have at least one segment".into(),
            });
        }
        if segments[0].start_s != 0.0 {
            return Err(Error::InvalidParameter {
                name: "schedule",
                message: format!("first segment must start at 0, got {}", segments[0].start_s),
            });
        }
        for w in segments.windows(2) {
            if !(w[1].start_s > w[0].start_s) {
                return Err(Error::InvalidParameter {
                    name: "schedule",
                    message: format!(
                        "segment starts must strictly increase ({} then {})",
                        w[0].start_s, w[1].start_s
                    ),
                });
            }
        }
        Ok(Self { segments })
    }

    pub fn single(mode: usize) -> Self {
        Self {
            segments: vec![ScheduleSegment { start_s: 0.0, mode }],
        }
    }

    pub fn segments(&self) -> &[ScheduleSegment] {
        &self.segments
    }

    /// Active mode at time `t`: the last segment with `start <= t`.
    pub fn mode_at(&self, t: f64) -> usize {
        let mut mode = self.segments[0].mode;
        for seg in &self.segments {
            if seg.start_s <= t {
                mode = seg.mode;
            } else {
                break;
            }
        }
        mode
    }

    pub fn max_mode(&self) -> usize {
        self.segments.iter().map(|s| s.mode).max().unwrap_or(0)
    }
}

/// Open-loop command profiles. All hold the forward speed constant and
/// shape the yaw-rate command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManeuverKind {
    /// Outward spiral: the turning radius grows at a constant rate.
    Spiral {
        base_speed_mps: f64,
        initial_radius_m: f64,
        radius_growth_mps: f64,
    },
    /// Constant-radius circle.
    Skidpad { base_speed_mps: f64, radius_m: f64 },
    /// Curvature ramps linearly from zero.
    Clothoid {
        base_speed_mps: f64,
        curvature_rate_per_ms: f64,
    },
    /// Sinusoidal yaw-rate weave.
    Sinusoidal {
        base_speed_mps: f64,
        amplitude_rad_s: f64,
        frequency_hz: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverProfile {
    #[serde(flatten)]
    pub kind: ManeuverKind,
    pub duration_s: f64,
}

impl ManeuverProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::InvalidParameter {
                name: "duration_s",
                message: format!("must be positive and finite, got {}", self.duration_s),
            });
        }
        match self.kind {
            ManeuverKind::Spiral {
                base_speed_mps,
                initial_radius_m,
                radius_growth_mps,
            } => {
                check_positive("base_speed_mps", base_speed_mps)?;
                check_positive("initial_radius_m", initial_radius_m)?;
                check_positive("radius_growth_mps", radius_growth_mps)?;
            }
            ManeuverKind::Skidpad {
                base_speed_mps,
                radius_m,
            } => {
                check_positive("base_speed_mps", base_speed_mps)?;
                if radius_m == 0.0 || !radius_m.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "radius_m",
                        message: format!("must be nonzero and finite, got {radius_m}"),
                    });
                }
            }
            ManeuverKind::Clothoid {
                base_speed_mps,
                curvature_rate_per_ms,
            } => {
                check_positive("base_speed_mps", base_speed_mps)?;
                if !curvature_rate_per_ms.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "curvature_rate_per_ms",
                        message: "must be finite".into(),
                    });
                }
            }
            ManeuverKind::Sinusoidal {
                base_speed_mps,
                amplitude_rad_s,
                frequency_hz,
            } => {
                check_positive("base_speed_mps", base_speed_mps)?;
                check_positive("frequency_hz", frequency_hz)?;
                if !(amplitude_rad_s >= 0.0) || !amplitude_rad_s.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "amplitude_rad_s",
                        message: format!("must be nonnegative and finite, got {amplitude_rad_s}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Commanded wheel speeds at time `t`, inverted through the ideal
    /// differential-drive kinematics.
    pub fn command_at(&self, geom: &RobotGeometry, t: f64) -> Result<WheelCommand> {
        if !t.is_finite() {
            return Err(Error::ManeuverDomain {
                t_s: t,
                message: "time must be finite".into(),
            });
        }
        let (u1, u2) = match self.kind {
            ManeuverKind::Spiral {
                base_speed_mps,
                initial_radius_m,
                radius_growth_mps,
            } => {
                let radius = initial_radius_m + radius_growth_mps * t;
                if !(radius > 0.0) {
                    return Err(Error::ManeuverDomain {
                        t_s: t,
                        message: format!("spiral radius {radius} m is not positive"),
                    });
                }
                (base_speed_mps, base_speed_mps / radius)
            }
            ManeuverKind::Skidpad {
                base_speed_mps,
                radius_m,
            } => (base_speed_mps, base_speed_mps / radius_m),
            ManeuverKind::Clothoid {
                base_speed_mps,
                curvature_rate_per_ms,
            } => (
                base_speed_mps,
                base_speed_mps * curvature_rate_per_ms * t,
            ),
            ManeuverKind::Sinusoidal {
                base_speed_mps,
                amplitude_rad_s,
                frequency_hz,
            } => (
                base_speed_mps,
                amplitude_rad_s * (std::f64::consts::TAU * frequency_hz * t).sin(),
            ),
        };
        Ok(WheelCommand::from_body(u1, u2, geom))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            message: format!("must be positive and finite, got {v}"),
        });
    }
    Ok(())
}

/// Sensor model used for measurement synthesis.
#[derive(Clone, Copy, Debug)]
pub struct SensorConfig<const N: usize> {
    noise_cov: SMatrix<f64, N, N>,
    rate_hz: f64,
    seed: u64,
}

impl<const N: usize> SensorConfig<N> {
    pub fn new(noise_cov: SMatrix<f64, N, N>, rate_hz: f64, seed: u64) -> Result<Self> {
        check_psd(&noise_cov, "sensor noise")?;
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::InvalidParameter {
                name: "rate_hz",
                message: format!("must be positive and finite, got {rate_hz}"),
            });
        }
        Ok(Self {
            noise_cov,
            rate_hz,
            seed,
        })
    }

    pub fn noise_cov(&self) -> &SMatrix<f64, N, N> {
        &self.noise_cov
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Truth samples per measurement. Errors if the sensor is faster than
    /// the simulation grid or does not land on it.
    pub fn stride_for(&self, dt: f64) -> Result<usize> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidTimeStep { dt });
        }
        let ratio = 1.0 / (self.rate_hz * dt);
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-6 {
            return Err(Error::SensorRate {
                rate_hz: self.rate_hz,
                sim_hz: 1.0 / dt,
            });
        }
        Ok(stride as usize)
    }
}

/// One sample of simulated ground truth.
#[derive(Clone, Copy, Debug)]
pub struct TruthRecord {
    pub t_s: f64,
    pub true_mode: usize,
    pub cmd: WheelCommand,
    pub vel: VelState,
    pub pose: PoseState,
}

/// Knobs for truth generation.
#[derive(Clone, Copy, Debug)]
pub struct TruthOptions {
    /// Integrator substeps per output sample.
    pub substeps: u32,
    /// Whether to inject process noise from the active mode's Q.
    pub process_noise: bool,
    /// Relative perturbation applied once per run to the true parameters.
    pub param_jitter_rel: f64,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            substeps: 10,
            process_noise: true,
            param_jitter_rel: 0.05,
        }
    }
}

impl TruthOptions {
    fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidParameter {
                name: "substeps",
                message: "must be at least 1".into(),
            });
        }
        if !(self.param_jitter_rel >= 0.0 && self.param_jitter_rel < 1.0) {
            return Err(Error::InvalidParameter {
                name: "param_jitter_rel",
                message: format!("must lie in [0, 1), got {}", self.param_jitter_rel),
            });
        }
        Ok(())
    }
}

fn step_count(duration_s: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidTimeStep { dt });
    }
    let steps = (duration_s / dt).round();
    if steps < 1.0 {
        return Err(Error::InvalidParameter {
            name: "duration_s",
            message: format!("{duration_s} s is shorter than one step of {dt} s"),
        });
    }
    Ok(steps as usize)
}

fn check_schedule_modes(schedule: &ModeSchedule, n_modes: usize) -> Result<()> {
    if schedule.max_mode() >= n_modes {
        return Err(Error::InvalidParameter {
            name: "schedule",
            message: format!(
                "mode {} out of range for a bank of {n_modes}",
                schedule.max_mode()
            ),
        });
    }
    Ok(())
}

fn jitter_scale(rng: &mut ChaCha12Rng, rel: f64) -> f64 {
    1.0 + rel * (2.0 * rng.random::<f64>() - 1.0)
}

fn jittered_ltc(models: &[LtcModel], rel: f64, seed: u64) -> Result<Vec<LtcModel>> {
    if rel == 0.0 {
        return Ok(models.to_vec());
    }
    let mut rng = stream_rng(seed, STREAM_PARAMS);
    models
        .iter()
        .map(|m| {
            let sa = jitter_scale(&mut rng, rel);
            let sb = jitter_scale(&mut rng, rel);
            LtcModel::new(
                m.label(),
                m.a() * sa,
                m.b() * sb,
                *m.process_noise(),
                *m.measurement_noise(),
            )
        })
        .collect()
}

fn jittered_stc(models: &[StcModel], rel: f64, seed: u64) -> Result<Vec<StcModel>> {
    if rel == 0.0 {
        return Ok(models.to_vec());
    }
    let mut rng = stream_rng(seed, STREAM_PARAMS);
    models
        .iter()
        .map(|m| {
            let k = (m.k() * jitter_scale(&mut rng, rel)).clamp(f64::MIN_POSITIVE, 1.0);
            let mm = (m.m() * jitter_scale(&mut rng, rel)).clamp(f64::MIN_POSITIVE, 1.0);
            StcModel::new(m.label(), k, mm, *m.process_noise(), *m.measurement_noise())
        })
        .collect()
}

/// Simulates velocity-family truth. The velocity state follows the
/// scheduled mode's lag dynamics; the pose is carried along by integrating
/// the planar kinematics of that velocity, so downstream consumers get a
/// consistent trajectory.
pub fn simulate_truth_ltc(
    models: &[LtcModel],
    schedule: &ModeSchedule,
    profile: &ManeuverProfile,
    geom: &RobotGeometry,
    dt: f64,
    opts: &TruthOptions,
    seed: u64,
) -> Result<Vec<TruthRecord>> {
    profile.validate()?;
    opts.validate()?;
    check_schedule_modes(schedule, models.len())?;
    let steps = step_count(profile.duration_s, dt)?;
    let true_models = jittered_ltc(models, opts.param_jitter_rel, seed)?;
    let noise_factors: Vec<_> = true_models
        .iter()
        .map(|m| psd_sqrt(m.process_noise()))
        .collect();
    let mut rng = stream_rng(seed, STREAM_TRUTH);

    let substeps = opts.substeps;
    let dt_sub = dt / substeps as f64;
    let sqrt_dt_sub = dt_sub.sqrt();
    let mut vel = Vector2::zeros();
    let mut pose = Vector3::zeros();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(TruthRecord {
        t_s: 0.0,
        true_mode: schedule.mode_at(0.0),
        cmd: profile.command_at(geom, 0.0)?,
        vel: VelState::from_vector(&vel),
        pose: PoseState::from_vector(&pose),
    });

    for k in 0..steps {
        let t_k = k as f64 * dt;
        let mode = schedule.mode_at(t_k);
        let model = &true_models[mode];
        for s in 0..substeps {
            let cmd = profile.command_at(geom, t_k + s as f64 * dt_sub)?;
            let dvel = model.derivative(&vel, &cmd);
            let dpose = Vector3::new(vel[0] * pose[2].cos(), vel[0] * pose[2].sin(), vel[1]);
            vel += dvel * dt_sub;
            pose += dpose * dt_sub;
            if opts.process_noise {
                vel += noise_factors[mode] * standard_normal_vector::<2>(&mut rng) * sqrt_dt_sub;
            }
        }
        let t_next = (k + 1) as f64 * dt;
        out.push(TruthRecord {
            t_s: t_next,
            true_mode: schedule.mode_at(t_next),
            cmd: profile.command_at(geom, t_next)?,
            vel: VelState::from_vector(&vel),
            pose: PoseState::from_vector(&pose),
        });
    }
    Ok(out)
}

/// Simulates pose-family truth under the scheduled slip mode. The recorded
/// velocity is the realized body rate of the active mode.
pub fn simulate_truth_stc(
    models: &[StcModel],
    schedule: &ModeSchedule,
    profile: &ManeuverProfile,
    geom: &RobotGeometry,
    dt: f64,
    opts: &TruthOptions,
    seed: u64,
) -> Result<Vec<TruthRecord>> {
    profile.validate()?;
    opts.validate()?;
    check_schedule_modes(schedule, models.len())?;
    let steps = step_count(profile.duration_s, dt)?;
    let true_models = jittered_stc(models, opts.param_jitter_rel, seed)?;
    let noise_factors: Vec<_> = true_models
        .iter()
        .map(|m| psd_sqrt(m.process_noise()))
        .collect();
    let mut rng = stream_rng(seed, STREAM_TRUTH);

    let substeps = opts.substeps;
    let dt_sub = dt / substeps as f64;
    let sqrt_dt_sub = dt_sub.sqrt();
    let mut pose = Vector3::zeros();

    let record = |t: f64, pose: &Vector3<f64>| -> Result<TruthRecord> {
        let mode = schedule.mode_at(t);
        let cmd = profile.command_at(geom, t)?;
        let model = &true_models[mode];
        Ok(TruthRecord {
            t_s: t,
            true_mode: mode,
            cmd,
            vel: VelState {
                v_mps: model.k() * cmd.body_speed_mps(),
                omega_rad_s: model.m() * cmd.body_yaw_rate_rad_s(),
            },
            pose: PoseState::from_vector(pose),
        })
    };

    let mut out = Vec::with_capacity(steps + 1);
    out.push(record(0.0, &pose)?);
    for k in 0..steps {
        let t_k = k as f64 * dt;
        let mode = schedule.mode_at(t_k);
        let model = &true_models[mode];
        for s in 0..substeps {
            let cmd = profile.command_at(geom, t_k + s as f64 * dt_sub)?;
            let dpose = model.derivative(&pose, &cmd);
            pose += dpose * dt_sub;
            if opts.process_noise {
                pose += noise_factors[mode] * standard_normal_vector::<3>(&mut rng) * sqrt_dt_sub;
            }
        }
        out.push(record((k + 1) as f64 * dt, &pose)?);
    }
    Ok(out)
}

fn synthesize<const N: usize>(
    truth: &[TruthRecord],
    sensor: &SensorConfig<N>,
    dt: f64,
    state_of: impl Fn(&TruthRecord) -> SVector<f64, N>,
) -> Result<Vec<Measurement<N>>> {
    let stride = sensor.stride_for(dt)?;
    let factor = psd_sqrt(&sensor.noise_cov);
    let mut rng = stream_rng(sensor.seed, STREAM_SENSOR);
    let mut out = Vec::new();
    let mut idx = stride;
    while idx < truth.len() {
        let rec = &truth[idx];
        let value = state_of(rec) + factor * standard_normal_vector::<N>(&mut rng);
        out.push(Measurement::new(value, rec.t_s)?);
        idx += stride;
    }
    Ok(out)
}

/// Velocity measurements (inertial-sensor analog), decimated to the sensor
/// rate. The initial sample at t=0 is not measured; the filter's initial
/// state covers it.
pub fn synthesize_measurements_ltc(
    truth: &[TruthRecord],
    sensor: &SensorConfig<2>,
    dt: f64,
) -> Result<Vec<Measurement<2>>> {
    synthesize(truth, sensor, dt, |rec| rec.vel.to_vector())
}

/// Pose measurements (positioning-system analog), decimated to the sensor
/// rate.
pub fn synthesize_measurements_stc(
    truth: &[TruthRecord],
    sensor: &SensorConfig<3>,
    dt: f64,
) -> Result<Vec<Measurement<3>>> {
    synthesize(truth, sensor, dt, |rec| rec.pose.to_vector())
}
