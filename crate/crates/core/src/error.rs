use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single problem found while checking a scenario configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("time step must be positive and finite, got {dt}")]
    InvalidTimeStep { dt: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("expected a {expected} estimate, got a {got} estimate")]
    WrongPhase { expected: &'static str, got: &'static str },

    #[error("innovation covariance is not positive definite")]
    SingularInnovation,

    #[error("mixing normalizer for mode {mode} is not positive")]
    DegenerateMixing { mode: usize },

    #[error("mode probabilities sum to {sum}, expected 1")]
    UnnormalizedProbabilities { sum: f64 },

    #[error("filter bank is inconsistent: {0}")]
    BankMismatch(String),

    #[error("mode {mode} ({label}): {source}")]
    ModeStep {
        mode: usize,
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("sensor rate {rate_hz} Hz does not divide the simulation rate {sim_hz} Hz")]
    SensorRate { rate_hz: f64, sim_hz: f64 },

    #[error("maneuver command undefined at t = {t_s} s: {message}")]
    ManeuverDomain { t_s: f64, message: String },

    #[error("unknown bundled scenario `{0}`")]
    UnknownScenario(String),

    #[error("scenario configuration is invalid:\n{}", format_issues(.0))]
    InvalidScenario(Vec<ConfigIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}
