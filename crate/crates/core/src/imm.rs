//! Interacting multiple model estimation over a homogeneous filter bank.
//!
//! Each step runs five stages: mixing probabilities from the Markov
//! transition prior, moment mixing of the per-mode posteriors, one
//! predict/update cycle per mode, the mode-probability update from the
//! per-mode measurement likelihoods, and moment combination into a single
//! fused estimate.

use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{self, symmetrize, FilterState, Measurement, Phase, UpdateOutcome};
use crate::models::{MotionModel, WheelCommand};

/// Mode probabilities are clamped here after each update and renormalized,
/// so no mode can be absorbed permanently.
pub const MU_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic per-step mode transition prior.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    p: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "transition matrix",
                message: "must have at least one row".into(),
            });
        }
        let mut p = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter {
                    name: "transition matrix",
                    message: format!("row {i} has {} entries, expected {n}", row.len()),
                });
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "transition matrix",
                        message: format!("entry ({i}, {j}) = {v} is not a probability"),
                    });
                }
                p[(i, j)] = v;
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter {
                    name: "transition matrix",
                    message: format!("row {i} sums to {sum}, expected 1"),
                });
            }
        }
        Ok(Self { p })
    }

    /// Sticky prior: `self_prob` on the diagonal, the remainder split
    /// uniformly over the other modes.
    pub fn sticky(n: usize, self_prob: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "transition matrix",
                message: "must have at least one mode".into(),
            });
        }
        if !(self_prob > 0.0 && self_prob <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "self_prob",
                message: format!("must lie in (0, 1], got {self_prob}"),
            });
        }
        if n == 1 {
            return Self::from_rows(&[vec![1.0]]);
        }
        let off = (1.0 - self_prob) / (n - 1) as f64;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { self_prob } else { off })
                    .collect()
            })
            .collect();
        Self::from_rows(&rows)
    }

    pub fn n_modes(&self) -> usize {
        self.p.nrows()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.p[(from, to)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
}

/// Posterior probability of each mode. Always a valid probability vector
/// with every entry at or above the floor-induced minimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModeProbabilities {
    mu: Vec<f64>,
}

impl ModeProbabilities {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidParameter {
                name: "mode probabilities",
                message: "must have at least one mode".into(),
            });
        }
        let mut sum = 0.0;
        for (i, &v) in mu.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "mode probabilities",
                    message: format!("entry {i} = {v} is not a probability"),
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::UnnormalizedProbabilities { sum });
        }
        Ok(Self::floored(mu))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "mode probabilities",
                message: "must have at least one mode".into(),
            });
        }
        Ok(Self::floored(vec![1.0 / n as f64; n]))
    }

    /// Clamps to the floor and renormalizes; input must already be close
    /// to a probability vector.
    fn floored(mut mu: Vec<f64>) -> Self {
        for v in &mut mu {
            *v = v.max(MU_FLOOR);
        }
        let sum: f64 = mu.iter().sum();
        for v in &mut mu {
            *v /= sum;
        }
        Self { mu }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn get(&self, i: usize) -> f64 {
        self.mu[i]
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.mu.iter().enumerate().skip(1) {
            if v > self.mu[best] {
                best = i;
            }
        }
        best
    }
}

/// Index of the most probable mode (lowest-index tie-break).
pub fn dominant_mode(mu: &ModeProbabilities) -> usize {
    mu.dominant()
}

/// Which prior weights the mode-probability update uses.
///
/// `Posterior` weights each mode's likelihood by the previous posterior
/// probability directly. `Predicted` weights by the transition-propagated
/// (mixed) probabilities instead, which reacts to switches slightly faster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityUpdate {
    #[default]
    Posterior,
    Predicted,
}

/// Stage 1: mixing probabilities and their normalizers.
///
/// Returns `(mix, c)` where `mix[(i, j)]` is the probability that mode `i`
/// was active last step given mode `j` is active now, and
/// `c[j] = sum_i p_ij mu_i` is the predicted probability of mode `j`.
/// Each column of `mix` sums to one.
pub fn mixing_probabilities(
    mu_prev: &ModeProbabilities,
    trans: &TransitionMatrix,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = mu_prev.len();
    if trans.n_modes() != n {
        return Err(Error::BankMismatch(format!(
            "{n} mode probabilities vs {} transition rows",
            trans.n_modes()
        )));
    }
    let mu = mu_prev.as_slice();
    let mut c = vec![0.0; n];
    for j in 0..n {
        for (i, &mu_i) in mu.iter().enumerate() {
            c[j] += trans.prob(i, j) * mu_i;
        }
        if !(c[j] > 0.0) {
            return Err(Error::DegenerateMixing { mode: j });
        }
    }
    let mut mix = DMatrix::zeros(n, n);
    for j in 0..n {
        for (i, &mu_i) in mu.iter().enumerate() {
            mix[(i, j)] = trans.prob(i, j) * mu_i / c[j];
        }
    }
    Ok((mix, c))
}

/// Stage 2: per-mode mixed initial conditions.
///
/// For each target mode `j`, forms the mixture mean of the bank posteriors
/// under column `j` of the mixing matrix and the matching spread-corrected
/// covariance.
pub fn mix_moments<const N: usize>(
    bank: &[FilterState<N>],
    mix: &DMatrix<f64>,
) -> Vec<FilterState<N>> {
    let n = bank.len();
    assert_eq!(mix.nrows(), n, "mixing matrix rows must match bank size");
    assert_eq!(mix.ncols(), n, "mixing matrix must be square");
    let mut mixed = Vec::with_capacity(n);
    for j in 0..n {
        let mut x0 = SVector::<f64, N>::zeros();
        for (i, state) in bank.iter().enumerate() {
            x0 += state.state() * mix[(i, j)];
        }
        let mut p0 = SMatrix::<f64, N, N>::zeros();
        for (i, state) in bank.iter().enumerate() {
            let d = state.state() - x0;
            p0 += (state.covariance() + d * d.transpose()) * mix[(i, j)];
        }
        mixed.push(FilterState::posterior(x0, p0));
    }
    mixed
}

/// Stage 3: one predict/update cycle for every mode filter against the
/// shared command and measurement.
pub fn bank_step<M: MotionModel<N>, const N: usize>(
    mixed: &[FilterState<N>],
    models: &[M],
    cmd: &WheelCommand,
    meas: &Measurement<N>,
    dt: f64,
) -> Result<Vec<UpdateOutcome<N>>> {
    if mixed.len() != models.len() {
        return Err(Error::BankMismatch(format!(
            "{} states vs {} models",
            mixed.len(),
            models.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(models.len());
    for (i, (state, model)) in mixed.iter().zip(models).enumerate() {
        let step = filters::predict(state, model, cmd, dt)
            .and_then(|prior| filters::update(&prior, meas, model.measurement_noise()));
        match step {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                return Err(Error::ModeStep {
                    mode: i,
                    label: model.label().to_string(),
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(outcomes)
}

/// Stage 4: posterior mode probabilities from prior weights and per-mode
/// likelihoods, floored and renormalized.
pub fn update_mode_probabilities(
    prior_weights: &[f64],
    likelihoods: &[f64],
) -> Result<ModeProbabilities> {
    if prior_weights.len() != likelihoods.len() || prior_weights.is_empty() {
        return Err(Error::BankMismatch(format!(
            "{} weights vs {} likelihoods",
            prior_weights.len(),
            likelihoods.len()
        )));
    }
    let mut mu = Vec::with_capacity(prior_weights.len());
    let mut denom = 0.0;
    for (&w, &lik) in prior_weights.iter().zip(likelihoods) {
        if !w.is_finite() || w < 0.0 || !lik.is_finite() || lik < 0.0 {
            return Err(Error::NonFinite {
                context: "mode probability update",
            });
        }
        let num = w * lik;
        mu.push(num);
        denom += num;
    }
    if !(denom > 0.0) {
        return Err(Error::DegenerateMixing {
            mode: dominant_index(likelihoods),
        });
    }
    for v in &mut mu {
        *v /= denom;
    }
    Ok(ModeProbabilities::floored(mu))
}

fn dominant_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stage 5: moment combination of the bank posteriors under `mu`.
pub fn combine<const N: usize>(
    bank: &[FilterState<N>],
    mu: &ModeProbabilities,
) -> Result<FilterState<N>> {
    if bank.len() != mu.len() {
        return Err(Error::BankMismatch(format!(
            "{} states vs {} probabilities",
            bank.len(),
            mu.len()
        )));
    }
    for state in bank {
        state.expect_phase(Phase::Posterior)?;
    }
    let mut x = SVector::<f64, N>::zeros();
    for (state, &w) in bank.iter().zip(mu.as_slice()) {
        x += state.state() * w;
    }
    let mut p = SMatrix::<f64, N, N>::zeros();
    for (state, &w) in bank.iter().zip(mu.as_slice()) {
        let d = state.state() - x;
        p += (state.covariance() + d * d.transpose()) * w;
    }
    Ok(FilterState::posterior(x, symmetrize(&p)))
}

/// Fused output of one estimation step.
#[derive(Clone, Debug)]
pub struct ImmOutput<const N: usize> {
    pub fused: FilterState<N>,
    pub mu: ModeProbabilities,
    pub dominant: usize,
    pub likelihoods: Vec<f64>,
}

/// The full estimator: a homogeneous bank of mode-matched filters plus the
/// Markov prior and the current mode probabilities.
#[derive(Clone, Debug)]
pub struct ImmState<M, const N: usize> {
    models: Vec<M>,
    bank: Vec<FilterState<N>>,
    mu: ModeProbabilities,
    trans: TransitionMatrix,
    update_rule: ProbabilityUpdate,
}

impl<M: MotionModel<N>, const N: usize> ImmState<M, N> {
    pub fn new(
        models: Vec<M>,
        bank: Vec<FilterState<N>>,
        mu: ModeProbabilities,
        trans: TransitionMatrix,
        update_rule: ProbabilityUpdate,
    ) -> Result<Self> {
        let n = models.len();
        if n == 0 {
            return Err(Error::BankMismatch("empty model bank".into()));
        }
        if bank.len() != n || mu.len() != n || trans.n_modes() != n {
            return Err(Error::BankMismatch(format!(
                "{} models, {} states, {} probabilities, {} transition rows",
                n,
                bank.len(),
                mu.len(),
                trans.n_modes()
            )));
        }
        for state in &bank {
            state.expect_phase(Phase::Posterior)?;
        }
        Ok(Self {
            models,
            bank,
            mu,
            trans,
            update_rule,
        })
    }

    /// All modes start from one shared posterior with uniform probabilities.
    pub fn from_shared_initial(
        models: Vec<M>,
        initial: FilterState<N>,
        trans: TransitionMatrix,
        update_rule: ProbabilityUpdate,
    ) -> Result<Self> {
        let n = models.len();
        let mu = ModeProbabilities::uniform(n)?;
        Self::new(models, vec![initial; n], mu, trans, update_rule)
    }

    pub fn models(&self) -> &[M] {
        &self.models
    }

    pub fn bank(&self) -> &[FilterState<N>] {
        &self.bank
    }

    pub fn mu(&self) -> &ModeProbabilities {
        &self.mu
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.trans
    }

    pub fn update_rule(&self) -> ProbabilityUpdate {
        self.update_rule
    }

    /// Runs the five-stage cycle for one command/measurement pair.
    ///
    /// The state mutates only after every stage has succeeded, so a failed
    /// step leaves `self` exactly as it was.
    pub fn step(
        &mut self,
        cmd: &WheelCommand,
        meas: &Measurement<N>,
        dt: f64,
    ) -> Result<ImmOutput<N>> {
        let (mix, c) = mixing_probabilities(&self.mu, &self.trans)?;
        let mixed = mix_moments(&self.bank, &mix);
        let outcomes = bank_step(&mixed, &self.models, cmd, meas, dt)?;
        let likelihoods: Vec<f64> = outcomes.iter().map(|o| o.likelihood).collect();
        let weights = match self.update_rule {
            ProbabilityUpdate::Posterior => self.mu.as_slice(),
            ProbabilityUpdate::Predicted => &c,
        };
        let mu = update_mode_probabilities(weights, &likelihoods)?;
        let posteriors: Vec<FilterState<N>> = outcomes.iter().map(|o| o.posterior).collect();
        let fused = combine(&posteriors, &mu)?;

        self.bank = posteriors;
        self.mu = mu.clone();
        let dominant = mu.dominant();
        Ok(ImmOutput {
            fused,
            mu,
            dominant,
            likelihoods,
        })
    }
}
