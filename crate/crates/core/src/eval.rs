//! Metrics computed over a completed run trace.
//!
//! Everything here is a pure function of the trace; recomputing a metric on
//! the same trace is bit-identical.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::ModelFamily;

/// Weight level the true mode must reach to count as identified.
pub const DEFAULT_ID_THRESHOLD: f64 = 0.8;
/// How long the weight must stay at the threshold before it counts.
pub const DEFAULT_DWELL_S: f64 = 1.0;

const TIME_GRID_TOL: f64 = 1e-9;

/// One logged step: the fused estimate and mode weights alongside truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t_s: f64,
    pub true_mode: usize,
    pub dominant_mode: usize,
    pub mu: Vec<f64>,
    pub fused: Vec<f64>,
    pub truth: Vec<f64>,
    pub likelihoods: Vec<f64>,
}

/// A uniformly sampled run log. Construct through [`RunTrace::new`], which
/// enforces the grid and per-row shape invariants the metrics rely on.
#[derive(Clone, Debug)]
pub struct RunTrace {
    family: ModelFamily,
    dt_s: f64,
    rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn new(family: ModelFamily, dt_s: f64, rows: Vec<TraceRow>) -> Result<Self> {
        if !(dt_s > 0.0) || !dt_s.is_finite() {
            return Err(Error::InvalidTimeStep { dt: dt_s });
        }
        if rows.is_empty() {
            return Err(Error::InvalidParameter {
                name: "trace",
                message: "must have at least one row".into(),
            });
        }
        let n_modes = rows[0].mu.len();
        let dim = family.state_dim();
        for (i, row) in rows.iter().enumerate() {
            if row.mu.len() != n_modes || row.likelihoods.len() != n_modes {
                return Err(Error::InvalidParameter {
                    name: "trace",
                    message: format!("row {i} has inconsistent mode count"),
                });
            }
            if row.fused.len() != dim || row.truth.len() != dim {
                return Err(Error::InvalidParameter {
                    name: "trace",
                    message: format!("row {i} state length does not match {family}"),
                });
            }
            if row.true_mode >= n_modes || row.dominant_mode >= n_modes {
                return Err(Error::InvalidParameter {
                    name: "trace",
                    message: format!("row {i} mode index out of range"),
                });
            }
            let sum: f64 = row.mu.iter().sum();
            if row.mu.iter().any(|&m| !(m >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::UnnormalizedProbabilities { sum });
            }
            if i > 0 {
                let gap = row.t_s - rows[i - 1].t_s;
                if (gap - dt_s).abs() > TIME_GRID_TOL {
                    return Err(Error::InvalidParameter {
                        name: "trace",
                        message: format!("row {i} breaks the uniform {dt_s} s grid (gap {gap})"),
                    });
                }
            }
        }
        Ok(Self { family, dt_s, rows })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_s
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn n_modes(&self) -> usize {
        self.rows[0].mu.len()
    }
}

/// Identification outcome for one true-mode segment. `latency_s` is `None`
/// when the mode was never held at the threshold long enough.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SegmentLatency {
    pub segment_start_s: f64,
    pub mode: usize,
    pub latency_s: Option<f64>,
}

/// The summary bundle written next to each run.
#[derive(Clone, Debug, Serialize)]
pub struct RunMetrics {
    pub latencies: Vec<SegmentLatency>,
    pub mode_accuracy: f64,
    pub state_rmse: Vec<f64>,
    pub mean_max_mu: f64,
}

/// Per-segment time for the true mode's weight to reach `threshold` and
/// hold it for `dwell_s`, measured from the segment start. The dwell window
/// must fit inside the segment; a hold truncated by the next switch (or the
/// end of the trace) does not count.
pub fn identification_latency(
    trace: &RunTrace,
    threshold: f64,
    dwell_s: f64,
) -> Vec<SegmentLatency> {
    assert!(
        threshold > 0.5 && threshold < 1.0,
        "threshold must lie in (0.5, 1), got {threshold}"
    );
    assert!(dwell_s >= 0.0, "dwell must be nonnegative, got {dwell_s}");
    let rows = trace.rows();
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mode = rows[start].true_mode;
        let mut end = start + 1;
        while end < rows.len() && rows[end].true_mode == mode {
            end += 1;
        }
        out.push(segment_latency(&rows[start..end], mode, threshold, dwell_s));
        start = end;
    }
    out
}

fn segment_latency(
    rows: &[TraceRow],
    mode: usize,
    threshold: f64,
    dwell_s: f64,
) -> SegmentLatency {
    let start_t = rows[0].t_s;
    let mut latency_s = None;
    let mut i = 0;
    while i < rows.len() {
        if rows[i].mu[mode] >= threshold {
            let mut j = i;
            while j + 1 < rows.len() && rows[j + 1].mu[mode] >= threshold {
                j += 1;
            }
            if rows[j].t_s - rows[i].t_s >= dwell_s - TIME_GRID_TOL {
                latency_s = Some(rows[i].t_s - start_t);
                break;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    SegmentLatency {
        segment_start_s: start_t,
        mode,
        latency_s,
    }
}

/// Fraction of rows where the dominant mode matches the true mode.
pub fn mode_accuracy(trace: &RunTrace) -> f64 {
    let rows = trace.rows();
    let hits = rows
        .iter()
        .filter(|r| r.dominant_mode == r.true_mode)
        .count();
    hits as f64 / rows.len() as f64
}

/// Wraps an angle difference into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    (a + PI).rem_euclid(TAU) - PI
}

/// Per-component RMS of fused minus truth. Heading components are compared
/// through the wrapped angular difference.
pub fn state_rmse(trace: &RunTrace) -> Vec<f64> {
    let dim = trace.family().state_dim();
    let angle_component = match trace.family() {
        ModelFamily::Ltc => None,
        ModelFamily::Stc => Some(2),
    };
    let rows = trace.rows();
    let mut acc = vec![0.0; dim];
    for row in rows {
        for c in 0..dim {
            let mut err = row.fused[c] - row.truth[c];
            if Some(c) == angle_component {
                err = wrap_angle(err);
            }
            acc[c] += err * err;
        }
    }
    acc.iter()
        .map(|s| (s / rows.len() as f64).sqrt())
        .collect()
}

/// Mean over the trace of the largest mode weight; 1 means fully decisive,
/// 1/N means no opinion.
pub fn mean_max_mu(trace: &RunTrace) -> f64 {
    let rows = trace.rows();
    let total: f64 = rows
        .iter()
        .map(|r| r.mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / rows.len() as f64
}

/// All metrics at the default identification settings.
pub fn run_metrics(trace: &RunTrace) -> RunMetrics {
    RunMetrics {
        latencies: identification_latency(trace, DEFAULT_ID_THRESHOLD, DEFAULT_DWELL_S),
        mode_accuracy: mode_accuracy(trace),
        state_rmse: state_rmse(trace),
        mean_max_mu: mean_max_mu(trace),
    }
}
