//! Scenario configuration and the end-to-end pipeline: simulate truth,
//! synthesize measurements, run the filter bank, score the trace, and write
//! the run artifacts.
//!
//! Configurations are JSON with units spelled out in the field names. Most
//! sections have defaults; a minimal file needs a name, a bank, a maneuver,
//! and a schedule. `validate` reports every violation at once instead of
//! stopping at the first.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};
use crate::eval::{run_metrics, RunMetrics, RunTrace, TraceRow};
use crate::filters::{FilterState, Measurement};
use crate::imm::{combine, ImmState, ModeProbabilities, ProbabilityUpdate, TransitionMatrix};
use crate::models::{LtcModel, ModelFamily, MotionModel, RobotGeometry, StcModel};
use crate::sim::{
    simulate_truth_ltc, simulate_truth_stc, synthesize_measurements_ltc,
    synthesize_measurements_stc, ManeuverKind, ManeuverProfile, ModeSchedule, ScheduleSegment,
    SensorConfig, TruthOptions, TruthRecord,
};

pub const DEFAULT_DT_S: f64 = 0.05;
pub const DEFAULT_SENSOR_RATE_HZ: f64 = 20.0;
pub const DEFAULT_SELF_PROB: f64 = 0.97;

/// Default continuous-time process noise diagonals. These are deliberately
/// loose enough that a mode whose predictions lag the measurements by a few
/// centimeters per step stays plausible for a while, and tight enough that a
/// wrong turn rate is ruled out within seconds.
pub const LTC_Q_DIAG: [f64; 2] = [2.5e-4, 2.5e-4];
pub const STC_Q_DIAG: [f64; 3] = [1e-2, 1e-2, 2.5e-3];

/// Default sensor noise: body-rate sensing at 0.05 (m/s, rad/s) one sigma,
/// pose sensing at 0.3 m / 0.05 rad one sigma.
pub const LTC_SENSOR_DIAG: [f64; 2] = [6.25e-4, 6.25e-4];
pub const STC_SENSOR_DIAG: [f64; 3] = [9e-2, 9e-2, 2.5e-3];

const LTC_INIT_COV_DIAG: [f64; 2] = [0.1, 0.1];
const STC_INIT_COV_DIAG: [f64; 3] = [0.25, 0.25, 0.04];

const DEFAULT_WHEEL_RADIUS_M: f64 = 0.165;
const DEFAULT_TRACK_WIDTH_M: f64 = 0.555;

fn default_dt() -> f64 {
    DEFAULT_DT_S
}

fn default_rate() -> f64 {
    DEFAULT_SENSOR_RATE_HZ
}

fn default_wheel_radius() -> f64 {
    DEFAULT_WHEEL_RADIUS_M
}

fn default_track_width() -> f64 {
    DEFAULT_TRACK_WIDTH_M
}

fn default_process_noise() -> bool {
    true
}

fn default_jitter() -> f64 {
    0.05
}

fn default_substeps() -> u32 {
    10
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_wheel_radius")]
    pub wheel_radius_m: f64,
    #[serde(default = "default_track_width")]
    pub track_width_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            wheel_radius_m: DEFAULT_WHEEL_RADIUS_M,
            track_width_m: DEFAULT_TRACK_WIDTH_M,
        }
    }
}

/// One terrain mode: a first-order lag toward traction-scaled body rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtcModeConfig {
    pub label: String,
    pub traction_factor: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub q_diag: Option<[f64; 2]>,
    #[serde(default)]
    pub r_diag: Option<[f64; 2]>,
}

/// One slip mode: forward speed scaled by `k`, yaw rate by `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StcModeConfig {
    pub label: String,
    pub k: f64,
    pub m: f64,
    #[serde(default)]
    pub q_diag: Option<[f64; 3]>,
    #[serde(default)]
    pub r_diag: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BankConfig {
    Ltc { modes: Vec<LtcModeConfig> },
    Stc { modes: Vec<StcModeConfig> },
}

impl BankConfig {
    pub fn family(&self) -> ModelFamily {
        match self {
            BankConfig::Ltc { .. } => ModelFamily::Ltc,
            BankConfig::Stc { .. } => ModelFamily::Stc,
        }
    }

    pub fn n_modes(&self) -> usize {
        match self {
            BankConfig::Ltc { modes } => modes.len(),
            BankConfig::Stc { modes } => modes.len(),
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        match self {
            BankConfig::Ltc { modes } => modes.iter().map(|m| m.label.as_str()).collect(),
            BankConfig::Stc { modes } => modes.iter().map(|m| m.label.as_str()).collect(),
        }
    }
}

/// Markov prior: either a shared self-transition probability with the rest
/// spread uniformly, or explicit rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionConfig {
    SelfProb { self_prob: f64 },
    Rows { rows: Vec<Vec<f64>> },
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig::SelfProb {
            self_prob: DEFAULT_SELF_PROB,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    /// Diagonal of the sensor noise covariance; defaults per family.
    #[serde(default)]
    pub noise_diag: Option<Vec<f64>>,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self {
            rate_hz: DEFAULT_SENSOR_RATE_HZ,
            noise_diag: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    #[serde(default = "default_process_noise")]
    pub process_noise: bool,
    #[serde(default = "default_jitter")]
    pub param_jitter_rel: f64,
    #[serde(default = "default_substeps")]
    pub substeps: u32,
}

impl Default for TruthSection {
    fn default() -> Self {
        Self {
            process_noise: true,
            param_jitter_rel: 0.05,
            substeps: 10,
        }
    }
}

/// Everything one run needs. Serializes to/from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probability_update: ProbabilityUpdate,
    #[serde(default)]
    pub geometry: GeometryConfig,
    pub bank: BankConfig,
    #[serde(default)]
    pub transition: TransitionConfig,
    /// Initial mode probabilities; uniform when omitted.
    #[serde(default)]
    pub initial_mu: Option<Vec<f64>>,
    pub maneuver: ManeuverProfile,
    pub schedule: Vec<ScheduleSegment>,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub truth: TruthSection,
    /// Initial fused state estimate; zeros when omitted.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Diagonal of the initial covariance; a per-family default when omitted.
    #[serde(default)]
    pub initial_cov_diag: Option<Vec<f64>>,
}

fn issue(field: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        field: field.into(),
        message: message.into(),
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ScenarioConfig {
    pub fn family(&self) -> ModelFamily {
        self.bank.family()
    }

    pub fn n_modes(&self) -> usize {
        self.bank.n_modes()
    }

    /// Sensor noise diagonal after applying family defaults.
    pub fn sensor_noise_diag(&self) -> Vec<f64> {
        match &self.sensor.noise_diag {
            Some(d) => d.clone(),
            None => match self.family() {
                ModelFamily::Ltc => LTC_SENSOR_DIAG.to_vec(),
                ModelFamily::Stc => STC_SENSOR_DIAG.to_vec(),
            },
        }
    }

    fn sensor_diag_fixed<const D: usize>(&self) -> Result<[f64; D]> {
        let diag = self.sensor_noise_diag();
        diag.as_slice().try_into().map_err(|_| Error::InvalidParameter {
            name: "sensor.noise_diag",
            message: format!("expected {D} entries, got {}", diag.len()),
        })
    }

    pub fn geometry(&self) -> Result<RobotGeometry> {
        RobotGeometry::new(self.geometry.wheel_radius_m, self.geometry.track_width_m)
    }

    pub fn ltc_models(&self) -> Result<Vec<LtcModel>> {
        let modes = match &self.bank {
            BankConfig::Ltc { modes } => modes,
            BankConfig::Stc { .. } => {
                return Err(Error::BankMismatch("expected an ltc bank".into()))
            }
        };
        let geom = self.geometry()?;
        let sensor: [f64; 2] = self.sensor_diag_fixed()?;
        modes
            .iter()
            .map(|m| {
                let q = m.q_diag.unwrap_or(LTC_Q_DIAG);
                let r = m.r_diag.unwrap_or(sensor);
                LtcModel::first_order_lag(
                    &m.label,
                    m.traction_factor,
                    m.tau_s,
                    &geom,
                    Matrix2::from_diagonal(&Vector2::new(q[0], q[1])),
                    Matrix2::from_diagonal(&Vector2::new(r[0], r[1])),
                )
            })
            .collect()
    }

    pub fn stc_models(&self) -> Result<Vec<StcModel>> {
        let modes = match &self.bank {
            BankConfig::Stc { modes } => modes,
            BankConfig::Ltc { .. } => {
                return Err(Error::BankMismatch("expected an stc bank".into()))
            }
        };
        let sensor: [f64; 3] = self.sensor_diag_fixed()?;
        modes
            .iter()
            .map(|m| {
                let q = m.q_diag.unwrap_or(STC_Q_DIAG);
                let r = m.r_diag.unwrap_or(sensor);
                StcModel::new(
                    &m.label,
                    m.k,
                    m.m,
                    Matrix3::from_diagonal(&Vector3::new(q[0], q[1], q[2])),
                    Matrix3::from_diagonal(&Vector3::new(r[0], r[1], r[2])),
                )
            })
            .collect()
    }

    pub fn mode_schedule(&self) -> Result<ModeSchedule> {
        ModeSchedule::new(self.schedule.clone())
    }

    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        match &self.transition {
            TransitionConfig::SelfProb { self_prob } => {
                TransitionMatrix::sticky(self.n_modes(), *self_prob)
            }
            TransitionConfig::Rows { rows } => {
                let t = TransitionMatrix::from_rows(rows)?;
                if t.n_modes() != self.n_modes() {
                    return Err(Error::BankMismatch(format!(
                        "{} transition rows for {} modes",
                        t.n_modes(),
                        self.n_modes()
                    )));
                }
                Ok(t)
            }
        }
    }

    pub fn initial_mu_probs(&self) -> Result<ModeProbabilities> {
        match &self.initial_mu {
            Some(mu) => {
                if mu.len() != self.n_modes() {
                    return Err(Error::BankMismatch(format!(
                        "{} initial probabilities for {} modes",
                        mu.len(),
                        self.n_modes()
                    )));
                }
                ModeProbabilities::new(mu.clone())
            }
            None => ModeProbabilities::uniform(self.n_modes()),
        }
    }

    pub fn truth_options(&self) -> TruthOptions {
        TruthOptions {
            substeps: self.truth.substeps,
            process_noise: self.truth.process_noise,
            param_jitter_rel: self.truth.param_jitter_rel,
        }
    }

    pub fn sensor_ltc(&self) -> Result<SensorConfig<2>> {
        let d: [f64; 2] = self.sensor_diag_fixed()?;
        SensorConfig::new(
            Matrix2::from_diagonal(&Vector2::new(d[0], d[1])),
            self.sensor.rate_hz,
            self.seed,
        )
    }

    pub fn sensor_stc(&self) -> Result<SensorConfig<3>> {
        let d: [f64; 3] = self.sensor_diag_fixed()?;
        SensorConfig::new(
            Matrix3::from_diagonal(&Vector3::new(d[0], d[1], d[2])),
            self.sensor.rate_hz,
            self.seed,
        )
    }

    /// Checks every invariant without running, reporting all violations.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.name.is_empty() {
            issues.push(issue("name", "must not be empty"));
        }
        if !positive(self.dt_s) {
            issues.push(issue(
                "dt_s",
                format!("must be positive and finite, got {}", self.dt_s),
            ));
        }
        if !positive(self.geometry.wheel_radius_m) {
            issues.push(issue(
                "geometry.wheel_radius_m",
                format!("must be positive, got {}", self.geometry.wheel_radius_m),
            ));
        }
        if !positive(self.geometry.track_width_m) {
            issues.push(issue(
                "geometry.track_width_m",
                format!("must be positive, got {}", self.geometry.track_width_m),
            ));
        }
        self.validate_bank(&mut issues);
        self.validate_transition(&mut issues);
        self.validate_initials(&mut issues);
        self.validate_maneuver(&mut issues);
        self.validate_schedule(&mut issues);
        self.validate_sensor(&mut issues);
        if self.truth.substeps == 0 {
            issues.push(issue("truth.substeps", "must be at least 1"));
        }
        if !(self.truth.param_jitter_rel >= 0.0 && self.truth.param_jitter_rel < 1.0) {
            issues.push(issue(
                "truth.param_jitter_rel",
                format!("must lie in [0, 1), got {}", self.truth.param_jitter_rel),
            ));
        }
        issues
    }

    fn validate_bank(&self, issues: &mut Vec<ConfigIssue>) {
        if self.bank.n_modes() == 0 {
            issues.push(issue("bank.modes", "must have at least one mode"));
            return;
        }
        let check_label = |i: usize, label: &str, issues: &mut Vec<ConfigIssue>| {
            if label.is_empty() {
                issues.push(issue(format!("bank.modes[{i}].label"), "must not be empty"));
            } else if label.contains([',', '\n', '"']) {
                issues.push(issue(
                    format!("bank.modes[{i}].label"),
                    "must not contain commas, quotes, or newlines",
                ));
            }
        };
        let check_diag = |field: String, d: &[f64], strict: bool, issues: &mut Vec<ConfigIssue>| {
            for (j, &v) in d.iter().enumerate() {
                let ok = if strict { positive(v) } else { v >= 0.0 && v.is_finite() };
                if !ok {
                    let need = if strict { "positive" } else { "nonnegative" };
                    issues.push(issue(field.clone(), format!("entry {j} must be {need}, got {v}")));
                }
            }
        };
        match &self.bank {
            BankConfig::Ltc { modes } => {
                for (i, m) in modes.iter().enumerate() {
                    check_label(i, &m.label, issues);
                    if !(m.traction_factor > 0.0 && m.traction_factor <= 1.0) {
                        issues.push(issue(
                            format!("bank.modes[{i}].traction_factor"),
                            format!("must lie in (0, 1], got {}", m.traction_factor),
                        ));
                    }
                    if !positive(m.tau_s) {
                        issues.push(issue(
                            format!("bank.modes[{i}].tau_s"),
                            format!("must be positive, got {}", m.tau_s),
                        ));
                    }
                    if let Some(q) = &m.q_diag {
                        check_diag(format!("bank.modes[{i}].q_diag"), q, false, issues);
                    }
                    if let Some(r) = &m.r_diag {
                        check_diag(format!("bank.modes[{i}].r_diag"), r, true, issues);
                    }
                }
            }
            BankConfig::Stc { modes } => {
                for (i, m) in modes.iter().enumerate() {
                    check_label(i, &m.label, issues);
                    for (coeff, v) in [("k", m.k), ("m", m.m)] {
                        if !(v > 0.0 && v <= 1.0) {
                            issues.push(issue(
                                format!("bank.modes[{i}].{coeff}"),
                                format!("must lie in (0, 1], got {v}"),
                            ));
                        }
                    }
                    if let Some(q) = &m.q_diag {
                        check_diag(format!("bank.modes[{i}].q_diag"), q, false, issues);
                    }
                    if let Some(r) = &m.r_diag {
                        check_diag(format!("bank.modes[{i}].r_diag"), r, true, issues);
                    }
                }
            }
        }
    }

    fn validate_transition(&self, issues: &mut Vec<ConfigIssue>) {
        let n = self.n_modes();
        match &self.transition {
            TransitionConfig::SelfProb { self_prob } => {
                if !(*self_prob > 0.0 && *self_prob <= 1.0) {
                    issues.push(issue(
                        "transition.self_prob",
                        format!("must lie in (0, 1], got {self_prob}"),
                    ));
                }
            }
            TransitionConfig::Rows { rows } => {
                if rows.len() != n {
                    issues.push(issue(
                        "transition.rows",
                        format!("got {} rows for {n} modes", rows.len()),
                    ));
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != rows.len() {
                        issues.push(issue(
                            format!("transition.rows[{i}]"),
                            format!("row length {} does not match {} rows", row.len(), rows.len()),
                        ));
                        continue;
                    }
                    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                        issues.push(issue(
                            format!("transition.rows[{i}]"),
                            "entries must be nonnegative and finite",
                        ));
                        continue;
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        issues.push(issue(
                            format!("transition.rows[{i}]"),
                            format!("sums to {sum}, expected 1"),
                        ));
                    }
                }
            }
        }
    }

    fn validate_initials(&self, issues: &mut Vec<ConfigIssue>) {
        let n = self.n_modes();
        let dim = self.family().state_dim();
        if let Some(mu) = &self.initial_mu {
            if mu.len() != n {
                issues.push(issue(
                    "initial_mu",
                    format!("got {} entries for {n} modes", mu.len()),
                ));
            } else {
                if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
                    issues.push(issue("initial_mu", "entries must be nonnegative and finite"));
                }
                let sum: f64 = mu.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    issues.push(issue("initial_mu", format!("sums to {sum}, expected 1")));
                }
            }
        }
        if let Some(x) = &self.initial_state {
            if x.len() != dim {
                issues.push(issue(
                    "initial_state",
                    format!("expected {dim} components, got {}", x.len()),
                ));
            } else if x.iter().any(|v| !v.is_finite()) {
                issues.push(issue("initial_state", "components must be finite"));
            }
        }
        if let Some(p) = &self.initial_cov_diag {
            if p.len() != dim {
                issues.push(issue(
                    "initial_cov_diag",
                    format!("expected {dim} entries, got {}", p.len()),
                ));
            } else {
                for (j, &v) in p.iter().enumerate() {
                    if !positive(v) {
                        issues.push(issue(
                            "initial_cov_diag",
                            format!("entry {j} must be positive, got {v}"),
                        ));
                    }
                }
            }
        }
    }

    fn validate_maneuver(&self, issues: &mut Vec<ConfigIssue>) {
        if let Err(e) = self.maneuver.validate() {
            let field = match &e {
                Error::InvalidParameter { name, .. } => format!("maneuver.{name}"),
                _ => "maneuver".to_string(),
            };
            issues.push(issue(field, e.to_string()));
            return;
        }
        if positive(self.dt_s) && self.maneuver.duration_s < self.dt_s {
            issues.push(issue(
                "maneuver.duration_s",
                format!(
                    "{} s is shorter than one {} s step",
                    self.maneuver.duration_s, self.dt_s
                ),
            ));
        }
        // A spiral that collapses to zero radius mid-run is a domain error
        // at runtime; catch it here instead.
        if let ManeuverKind::Spiral {
            initial_radius_m,
            radius_growth_mps,
            ..
        } = self.maneuver.kind
        {
            if initial_radius_m + radius_growth_mps * self.maneuver.duration_s <= 0.0 {
                issues.push(issue(
                    "maneuver.initial_radius_m",
                    "radius reaches zero before the run ends",
                ));
            }
        }
    }

    fn validate_schedule(&self, issues: &mut Vec<ConfigIssue>) {
        if self.schedule.is_empty() {
            issues.push(issue("schedule", "must have at least one segment"));
            return;
        }
        if self.schedule[0].start_s != 0.0 {
            issues.push(issue(
                "schedule[0].start_s",
                format!("must be 0, got {}", self.schedule[0].start_s),
            ));
        }
        for (i, seg) in self.schedule.iter().enumerate() {
            if !seg.start_s.is_finite() {
                issues.push(issue(format!("schedule[{i}].start_s"), "must be finite"));
            }
            if seg.mode >= self.n_modes() {
                issues.push(issue(
                    format!("schedule[{i}].mode"),
                    format!("mode {} out of range for {} modes", seg.mode, self.n_modes()),
                ));
            }
        }
        for i in 1..self.schedule.len() {
            if !(self.schedule[i].start_s > self.schedule[i - 1].start_s) {
                issues.push(issue(
                    format!("schedule[{i}].start_s"),
                    format!(
                        "must increase (previous {}, got {})",
                        self.schedule[i - 1].start_s,
                        self.schedule[i].start_s
                    ),
                ));
            }
        }
    }

    fn validate_sensor(&self, issues: &mut Vec<ConfigIssue>) {
        if !positive(self.sensor.rate_hz) {
            issues.push(issue(
                "sensor.rate_hz",
                format!("must be positive and finite, got {}", self.sensor.rate_hz),
            ));
        } else if positive(self.dt_s) {
            let ratio = 1.0 / (self.sensor.rate_hz * self.dt_s);
            if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-6 {
                issues.push(issue(
                    "sensor.rate_hz",
                    format!(
                        "{} Hz does not divide the {} Hz simulation grid",
                        self.sensor.rate_hz,
                        1.0 / self.dt_s
                    ),
                ));
            }
        }
        let dim = self.family().state_dim();
        if let Some(d) = &self.sensor.noise_diag {
            if d.len() != dim {
                issues.push(issue(
                    "sensor.noise_diag",
                    format!("expected {dim} entries, got {}", d.len()),
                ));
                return;
            }
            for (j, &v) in d.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    issues.push(issue(
                        "sensor.noise_diag",
                        format!("entry {j} must be nonnegative, got {v}"),
                    ));
                }
            }
        }
        // Filters need a positive-definite R; modes without an explicit
        // override inherit the sensor diagonal.
        let sensor = self.sensor_noise_diag();
        if sensor.len() == dim {
            let inherited_bad = sensor.iter().any(|&v| !(v > 0.0));
            let needs_inherited = match &self.bank {
                BankConfig::Ltc { modes } => modes.iter().any(|m| m.r_diag.is_none()),
                BankConfig::Stc { modes } => modes.iter().any(|m| m.r_diag.is_none()),
            };
            if inherited_bad && needs_inherited {
                issues.push(issue(
                    "sensor.noise_diag",
                    "entries must be positive when a mode inherits them as measurement noise",
                ));
            }
        }
    }
}

fn initial_filter_state<const N: usize>(
    cfg: &ScenarioConfig,
    default_cov: &[f64; N],
) -> Result<FilterState<N>> {
    let x = match &cfg.initial_state {
        Some(v) => {
            if v.len() != N {
                return Err(Error::InvalidParameter {
                    name: "initial_state",
                    message: format!("expected {N} components, got {}", v.len()),
                });
            }
            SVector::<f64, N>::from_iterator(v.iter().copied())
        }
        None => SVector::zeros(),
    };
    let diag = match &cfg.initial_cov_diag {
        Some(v) => {
            if v.len() != N {
                return Err(Error::InvalidParameter {
                    name: "initial_cov_diag",
                    message: format!("expected {N} entries, got {}", v.len()),
                });
            }
            SVector::<f64, N>::from_iterator(v.iter().copied())
        }
        None => SVector::<f64, N>::from_iterator(default_cov.iter().copied()),
    };
    Ok(FilterState::posterior(x, SMatrix::from_diagonal(&diag)))
}

/// A finished run: the full trace and its metrics.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: RunTrace,
    pub metrics: RunMetrics,
}

/// Validates, simulates, filters, and scores one scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(Error::InvalidScenario(issues));
    }
    let trace = match cfg.family() {
        ModelFamily::Ltc => run_ltc(cfg)?,
        ModelFamily::Stc => run_stc(cfg)?,
    };
    let metrics = run_metrics(&trace);
    Ok(RunOutput { trace, metrics })
}

fn run_ltc(cfg: &ScenarioConfig) -> Result<RunTrace> {
    let geom = cfg.geometry()?;
    let models = cfg.ltc_models()?;
    let schedule = cfg.mode_schedule()?;
    let truth = simulate_truth_ltc(
        &models,
        &schedule,
        &cfg.maneuver,
        &geom,
        cfg.dt_s,
        &cfg.truth_options(),
        cfg.seed,
    )?;
    let sensor = cfg.sensor_ltc()?;
    let measurements = synthesize_measurements_ltc(&truth, &sensor, cfg.dt_s)?;
    let stride = sensor.stride_for(cfg.dt_s)?;
    let initial = initial_filter_state(cfg, &LTC_INIT_COV_DIAG)?;
    let imm = ImmState::new(
        models,
        vec![initial; cfg.n_modes()],
        cfg.initial_mu_probs()?,
        cfg.transition_matrix()?,
        cfg.probability_update,
    )?;
    filter_trace(cfg, imm, &geom, &truth, &measurements, stride, |rec| {
        rec.vel.to_vector()
    })
}

fn run_stc(cfg: &ScenarioConfig) -> Result<RunTrace> {
    let geom = cfg.geometry()?;
    let models = cfg.stc_models()?;
    let schedule = cfg.mode_schedule()?;
    let truth = simulate_truth_stc(
        &models,
        &schedule,
        &cfg.maneuver,
        &geom,
        cfg.dt_s,
        &cfg.truth_options(),
        cfg.seed,
    )?;
    let sensor = cfg.sensor_stc()?;
    let measurements = synthesize_measurements_stc(&truth, &sensor, cfg.dt_s)?;
    let stride = sensor.stride_for(cfg.dt_s)?;
    let initial = initial_filter_state(cfg, &STC_INIT_COV_DIAG)?;
    let imm = ImmState::new(
        models,
        vec![initial; cfg.n_modes()],
        cfg.initial_mu_probs()?,
        cfg.transition_matrix()?,
        cfg.probability_update,
    )?;
    filter_trace(cfg, imm, &geom, &truth, &measurements, stride, |rec| {
        rec.pose.to_vector()
    })
}

/// Runs the bank over the measurement stream. Row 0 snapshots the initial
/// estimate before any update; commands are held from the previous sample.
fn filter_trace<M: MotionModel<N>, const N: usize>(
    cfg: &ScenarioConfig,
    mut imm: ImmState<M, N>,
    geom: &RobotGeometry,
    truth: &[TruthRecord],
    measurements: &[Measurement<N>],
    stride: usize,
    state_of: impl Fn(&TruthRecord) -> SVector<f64, N>,
) -> Result<RunTrace> {
    let n = imm.mu().len();
    let fused0 = combine(imm.bank(), imm.mu())?;
    let mut rows = Vec::with_capacity(measurements.len() + 1);
    rows.push(TraceRow {
        t_s: truth[0].t_s,
        true_mode: truth[0].true_mode,
        dominant_mode: imm.mu().dominant(),
        mu: imm.mu().as_slice().to_vec(),
        fused: fused0.state().as_slice().to_vec(),
        truth: state_of(&truth[0]).as_slice().to_vec(),
        likelihoods: vec![0.0; n],
    });
    let step_dt = stride as f64 * cfg.dt_s;
    let mut prev_t = truth[0].t_s;
    for (j, meas) in measurements.iter().enumerate() {
        let cmd = cfg.maneuver.command_at(geom, prev_t)?;
        let out = imm.step(&cmd, meas, step_dt)?;
        let rec = &truth[(j + 1) * stride];
        rows.push(TraceRow {
            t_s: rec.t_s,
            true_mode: rec.true_mode,
            dominant_mode: out.dominant,
            mu: out.mu.as_slice().to_vec(),
            fused: out.fused.state().as_slice().to_vec(),
            truth: state_of(rec).as_slice().to_vec(),
            likelihoods: out.likelihoods,
        });
        prev_t = rec.t_s;
    }
    RunTrace::new(cfg.family(), step_dt, rows)
}

fn trace_csv(cfg: &ScenarioConfig, trace: &RunTrace) -> String {
    let labels = cfg.bank.labels();
    let states = cfg.family().state_labels();
    let mut s = String::new();
    s.push_str("t_s,true_mode,dominant_mode");
    for l in &labels {
        let _ = write!(s, ",mu_{l}");
    }
    for st in states {
        let _ = write!(s, ",fused_{st}");
    }
    for st in states {
        let _ = write!(s, ",truth_{st}");
    }
    for l in &labels {
        let _ = write!(s, ",lik_{l}");
    }
    s.push('\n');
    for row in trace.rows() {
        let _ = write!(s, "{},{},{}", row.t_s, row.true_mode, row.dominant_mode);
        for v in &row.mu {
            let _ = write!(s, ",{v}");
        }
        for v in &row.fused {
            let _ = write!(s, ",{v}");
        }
        for v in &row.truth {
            let _ = write!(s, ",{v}");
        }
        // Likelihoods span hundreds of orders of magnitude; keep them in
        // scientific notation.
        for v in &row.likelihoods {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

fn weights_csv(cfg: &ScenarioConfig, trace: &RunTrace) -> String {
    let labels = cfg.bank.labels();
    let mut s = String::from("t_s");
    for l in &labels {
        let _ = write!(s, ",mu_{l}");
    }
    s.push('\n');
    for row in trace.rows() {
        let _ = write!(s, "{}", row.t_s);
        for v in &row.mu {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a ScenarioConfig,
    seed: u64,
    metrics: &'a RunMetrics,
}

/// Writes `trace.csv`, `weights.csv`, and `summary.json` into `dir`.
pub fn write_outputs(cfg: &ScenarioConfig, out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.csv"), trace_csv(cfg, &out.trace))?;
    fs::write(dir.join("weights.csv"), weights_csv(cfg, &out.trace))?;
    let mut json = serde_json::to_string_pretty(&Summary {
        scenario: cfg,
        seed: cfg.seed,
        metrics: &out.metrics,
    })?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

pub const BUNDLED_NAMES: [&str; 9] = [
    "ltc_asphalt",
    "ltc_grass",
    "ltc_crushed_concrete",
    "ltc_switching",
    "stc_baseline",
    "stc_front_slip",
    "stc_right_slip",
    "stc_four_wheel_slip",
    "stc_front_to_all",
];

/// The default terrain bank: asphalt, grass, crushed concrete.
pub fn default_ltc_modes() -> Vec<LtcModeConfig> {
    [
        ("asphalt", 0.95, 0.15),
        ("grass", 0.80, 0.25),
        ("crushed_concrete", 0.60, 0.40),
    ]
    .into_iter()
    .map(|(label, traction_factor, tau_s)| LtcModeConfig {
        label: label.into(),
        traction_factor,
        tau_s,
        q_diag: None,
        r_diag: None,
    })
    .collect()
}

/// The default slip bank: no slip, two front wheels, two right wheels, all
/// four wheels.
pub fn default_stc_modes() -> Vec<StcModeConfig> {
    [
        ("baseline", 1.0, 1.0),
        ("front_two_slip", 0.85, 0.90),
        ("right_two_slip", 0.90, 0.70),
        ("four_wheel_slip", 0.70, 0.75),
    ]
    .into_iter()
    .map(|(label, k, m)| StcModeConfig {
        label: label.into(),
        k,
        m,
        q_diag: None,
        r_diag: None,
    })
    .collect()
}

fn spiral(duration_s: f64) -> ManeuverProfile {
    ManeuverProfile {
        kind: ManeuverKind::Spiral {
            base_speed_mps: 0.5,
            initial_radius_m: 1.0,
            radius_growth_mps: 0.1,
        },
        duration_s,
    }
}

fn base_config(name: &str, bank: BankConfig, duration_s: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        dt_s: DEFAULT_DT_S,
        seed,
        probability_update: ProbabilityUpdate::default(),
        geometry: GeometryConfig::default(),
        bank,
        transition: TransitionConfig::default(),
        initial_mu: None,
        maneuver: spiral(duration_s),
        schedule: vec![ScheduleSegment {
            start_s: 0.0,
            mode: 0,
        }],
        sensor: SensorSection::default(),
        truth: TruthSection::default(),
        initial_state: None,
        initial_cov_diag: None,
    }
}

fn ltc_single(name: &str, mode: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = base_config(name, BankConfig::Ltc { modes: default_ltc_modes() }, 30.0, seed);
    cfg.schedule[0].mode = mode;
    cfg
}

fn stc_single(name: &str, modes: Vec<StcModeConfig>, mode: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = base_config(name, BankConfig::Stc { modes }, 20.0, seed);
    cfg.schedule[0].mode = mode;
    cfg
}

/// Looks up one of the nine bundled scenarios by name.
pub fn by_name(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "ltc_asphalt" => ltc_single(name, 0, 101),
        "ltc_grass" => ltc_single(name, 1, 102),
        "ltc_crushed_concrete" => ltc_single(name, 2, 103),
        "ltc_switching" => {
            let mut cfg = ltc_single(name, 2, 104);
            cfg.schedule = vec![
                ScheduleSegment { start_s: 0.0, mode: 2 },
                ScheduleSegment { start_s: 10.0, mode: 1 },
                ScheduleSegment { start_s: 20.0, mode: 0 },
            ];
            cfg
        }
        // The confusable case: the four-wheel mode is set proportional to
        // the baseline (equal forward and yaw scaling), so both predict the
        // same path and differ only in how fast it is traversed. The bank
        // then splits its weight between the two for most of the run, which
        // is the intended ambiguity, not a defect.
        "stc_baseline" => {
            let mut modes = default_stc_modes();
            modes[3].k = 0.95;
            modes[3].m = 0.95;
            stc_single(name, modes, 0, 201)
        }
        "stc_front_slip" => stc_single(name, default_stc_modes(), 1, 202),
        "stc_right_slip" => stc_single(name, default_stc_modes(), 2, 203),
        "stc_four_wheel_slip" => stc_single(name, default_stc_modes(), 3, 204),
        // The slip modes differ mostly in yaw response, so this run uses a
        // tighter, slower-opening spiral that keeps the turn rate high for
        // the whole 25 s window.
        "stc_front_to_all" => {
            let mut cfg = stc_single(name, default_stc_modes(), 1, 205);
            cfg.maneuver = ManeuverProfile {
                kind: ManeuverKind::Spiral {
                    base_speed_mps: 0.8,
                    initial_radius_m: 0.8,
                    radius_growth_mps: 0.03,
                },
                duration_s: 25.0,
            };
            cfg.schedule = vec![
                ScheduleSegment { start_s: 0.0, mode: 1 },
                ScheduleSegment { start_s: 10.0, mode: 3 },
            ];
            cfg
        }
        _ => return Err(Error::UnknownScenario(name.to_string())),
    };
    Ok(cfg)
}

/// Reads a configuration from a JSON file.
pub fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Treats `spec` as a file path if one exists, otherwise as a bundled name.
pub fn load_or_bundled(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        load(path)
    } else {
        by_name(spec)
    }
}
