//! Hyperparameter schedules from the finite-time guarantees of the three algorithms.
//!
//! The guarantees hold "for sufficiently large `c_T` and sufficiently small `c_eta`";
//! both constants are exposed as knobs (default 1), so every number produced here
//! is only meaningful up to those constants. `T` appears inside its own log factor;
//! it is resolved by starting from the bound with all log-of-`T` factors set to one
//! and re-evaluating the bound twice.

use serde::{Deserialize, Serialize};

use crate::chains::CoverageStats;
use crate::error::{Error, Result};

/// Number of fixed-point sweeps for the `T`-inside-log circularity.
const FIXED_POINT_SWEEPS: usize = 2;

/// Constant in the lower bound on the synchronization period for equal averaging.
const TAU0_CONSTANT: f64 = 443.0;

pub const CONSTANTS_NOTE: &str = "values hold up to the unspecified theorem constants c_T and c_eta";

/// Which guarantee to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Federated synchronous Q-learning.
    Sync,
    /// Federated asynchronous Q-learning with equal averaging.
    AsyncEqual,
    /// Federated asynchronous Q-learning with importance averaging.
    AsyncImportance,
}

/// Coverage figures consumed by the asynchronous schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub mu_min: f64,
    pub mu_avg: f64,
    #[serde(default)]
    pub c_het: Option<f64>,
    pub t_mix_max: usize,
}

impl From<&CoverageStats> for Coverage {
    fn from(s: &CoverageStats) -> Self {
        Coverage {
            mu_min: s.mu_min,
            mu_avg: s.mu_avg,
            c_het: s.c_het,
            t_mix_max: s.t_mix_max,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleRequest {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub delta: f64,
    pub agents: usize,
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(default)]
    pub coverage: Option<Coverage>,
    #[serde(default = "one")]
    pub c_t: f64,
    #[serde(default = "one")]
    pub c_eta: f64,
}

impl ScheduleRequest {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Invalid(format!("gamma {} not in [0,1)", self.gamma)));
        }
        let eps_max = 1.0 / (1.0 - self.gamma);
        if !(self.epsilon > 0.0 && self.epsilon <= eps_max) {
            return Err(Error::Invalid(format!(
                "epsilon {} not in (0, {eps_max}]",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Invalid(format!("delta {} not in (0,1)", self.delta)));
        }
        if self.agents == 0 || self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Invalid("agents, n_states and n_actions must be positive".into()));
        }
        if !(self.c_t > 0.0 && self.c_eta > 0.0) {
            return Err(Error::Invalid("c_t and c_eta must be positive".into()));
        }
        Ok(())
    }

    fn coverage(&self) -> Result<Coverage> {
        let c = self
            .coverage
            .ok_or_else(|| Error::Invalid("asynchronous schedules need coverage statistics".into()))?;
        if c.t_mix_max == 0 {
            return Err(Error::Invalid("t_mix_max must be positive".into()));
        }
        Ok(c)
    }

    fn pairs(&self) -> f64 {
        (self.n_states * self.n_actions) as f64
    }

    fn k(&self) -> f64 {
        self.agents as f64
    }

    /// `(log((1-gamma)^2 eps))^2`.
    fn accuracy_log_sq(&self) -> f64 {
        ((1.0 - self.gamma).powi(2) * self.epsilon).ln().powi(2)
    }
}

/// Output of a schedule evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub algorithm: Algorithm,
    pub eta: f64,
    /// Lower bound on the synchronization period (equal averaging only).
    pub tau_min: Option<usize>,
    pub tau_max: usize,
    /// Minimum per-agent sample size, rounded up to a multiple of `tau_max`.
    pub t_min: usize,
    /// Unrounded sample-size bound after the fixed-point sweeps.
    pub t_bound: f64,
    /// Mixing-dependent burn-in term (zero for the synchronous setting).
    pub burn_in: f64,
    pub warnings: Vec<String>,
    pub note: String,
}

impl Schedule {
    /// Ways in which a concrete `(eta, tau, T)` falls outside this schedule.
    /// Runs accept any parameters; these are advisory.
    pub fn violations(&self, eta: f64, tau: usize, horizon: usize) -> Vec<String> {
        let mut out = Vec::new();
        if eta > self.eta * (1.0 + 1e-12) {
            out.push(format!("learning rate {eta} exceeds the prescribed {}", self.eta));
        }
        if tau > self.tau_max {
            out.push(format!("period {tau} exceeds tau_max {}", self.tau_max));
        }
        if let Some(lo) = self.tau_min {
            if tau < lo {
                out.push(format!("period {tau} is below tau_min {lo}"));
            }
        }
        if horizon < self.t_min {
            out.push(format!("T = {horizon} is below t_min {}", self.t_min));
        }
        out
    }
}

/// Rounds a real bound to a positive multiple of `tau`.
fn round_to_period(t: f64, tau: usize) -> usize {
    let rounds = (t / tau as f64).ceil().max(1.0);
    rounds as usize * tau
}

/// Real-valued period bound to a usable integer (at least one).
fn floor_period(x: f64) -> usize {
    if x.is_finite() {
        x.floor().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Resolves `T >= f(T)` by two re-evaluations from `f` with log-of-`T` factors at one.
fn resolve_horizon(initial: f64, bound: impl Fn(f64) -> f64) -> f64 {
    let mut t = initial;
    for _ in 0..FIXED_POINT_SWEEPS {
        t = bound(t.max(2.0));
    }
    t
}

/// Log factor `log(|S||A| K T / delta)` of the synchronous guarantee.
fn sync_log(req: &ScheduleRequest, t: f64) -> f64 {
    (req.pairs() * req.k() * t / req.delta).ln()
}

/// Synchronous bound with its log-of-`T` factor left out.
fn sync_sample_term(req: &ScheduleRequest) -> f64 {
    req.c_t / (req.k() * (1.0 - req.gamma).powi(5) * req.epsilon.powi(2)) * req.accuracy_log_sq()
}

fn sync_bound(req: &ScheduleRequest, t: f64) -> f64 {
    sync_sample_term(req) * sync_log(req, t)
}

/// Synchronous schedule: learning rate, maximal period and minimal `T`.
pub fn syncq_schedule(req: &ScheduleRequest) -> Result<Schedule> {
    req.validate()?;
    let gamma = req.gamma;
    let t_bound = resolve_horizon(sync_sample_term(req), |t| sync_bound(req, t));
    let t_log = t_bound.max(2.0);
    let eta = req.c_eta * req.k() * (1.0 - gamma).powi(4) * req.epsilon.powi(2) / sync_log(req, t_log);
    let drift = if gamma > 0.0 {
        (1.0 - gamma) / (8.0 * gamma)
    } else {
        f64::INFINITY
    };
    let tau_max = floor_period(1.0 + drift.min(1.0 / req.k()) / eta);
    let mut warnings = Vec::new();
    if eta > 1.0 {
        warnings.push(format!("prescribed learning rate {eta} exceeds 1; increase the log factor or lower c_eta"));
    }
    Ok(Schedule {
        algorithm: Algorithm::Sync,
        eta,
        tau_min: None,
        tau_max,
        t_min: round_to_period(t_bound, tau_max),
        t_bound,
        burn_in: 0.0,
        warnings,
        note: CONSTANTS_NOTE.into(),
    })
}

/// `log(TK) * log(|S||A| T^2 K / delta)`, the log factor of both asynchronous guarantees.
fn async_log(req: &ScheduleRequest, t: f64) -> f64 {
    (t * req.k()).ln() * (req.pairs() * t * t * req.k() / req.delta).ln()
}

/// Asynchronous period upper bound `(1/(4 eta)) min{(1-gamma)/4, 1/K}`.
fn async_tau_max(req: &ScheduleRequest, eta: f64) -> usize {
    floor_period(((1.0 - req.gamma) / 4.0).min(1.0 / req.k()) / (4.0 * eta))
}

/// Sample-size terms of the equal-averaging bound for a frozen log factor:
/// `(c_T C_het / (mu_min K (1-gamma)^5 eps^2) * L, c_T T_0 * L)` with
/// `L = (log((1-gamma)^2 eps))^2 * log_factor`.
pub(crate) fn async_eq_terms(req: &ScheduleRequest, cov: &Coverage, c_het: f64, log_factor: f64) -> (f64, f64) {
    let one_minus = 1.0 - req.gamma;
    let eta0 = cov.mu_min * one_minus.min(1.0 / req.k()) / cov.t_mix_max as f64;
    let burn = 1.0 / (cov.mu_min * one_minus * eta0);
    let scale = req.c_t * req.accuracy_log_sq() * log_factor;
    (
        scale * c_het / (cov.mu_min * req.k() * one_minus.powi(5) * req.epsilon.powi(2)),
        scale * burn,
    )
}

/// Equal-averaging schedule. Requires every agent to cover every pair (`mu_min > 0`).
pub fn asynq_eq_schedule(req: &ScheduleRequest) -> Result<Schedule> {
    req.validate()?;
    let cov = req.coverage()?;
    if !(cov.mu_min > 0.0) {
        return Err(Error::Inapplicable(
            "equal-averaging guarantee is inapplicable: it requires full coverage by every agent (mu_min > 0)"
                .into(),
        ));
    }
    let c_het = cov
        .c_het
        .ok_or_else(|| Error::Invalid("c_het must be defined when mu_min > 0".into()))?;
    let one_minus = 1.0 - req.gamma;
    let eta0 = cov.mu_min * one_minus.min(1.0 / req.k()) / cov.t_mix_max as f64;
    let burn_in = 1.0 / (cov.mu_min * one_minus * eta0);

    let bound = |t: f64| {
        let (a, b) = async_eq_terms(req, &cov, c_het, async_log(req, t));
        a + b
    };
    let (a1, b1) = async_eq_terms(req, &cov, c_het, 1.0);
    let t_bound = resolve_horizon(a1 + b1, bound);
    let t_log = t_bound.max(2.0);
    let eta = req.c_eta * (req.k() * one_minus.powi(4) * req.epsilon.powi(2) / c_het).min(eta0)
        / async_log(req, t_log);
    let tau_min_real =
        TAU0_CONSTANT * cov.t_mix_max as f64 / cov.mu_min * (req.pairs() * t_log * req.k() / req.delta).ln();
    let tau_min = tau_min_real.ceil() as usize;
    let tau_max = async_tau_max(req, eta);
    let mut warnings = Vec::new();
    if tau_min > tau_max {
        warnings.push(format!(
            "no feasible period: tau_min {tau_min} exceeds tau_max {tau_max} at these constants"
        ));
    }
    Ok(Schedule {
        algorithm: Algorithm::AsyncEqual,
        eta,
        tau_min: Some(tau_min),
        tau_max,
        t_min: round_to_period(t_bound, tau_max),
        t_bound,
        burn_in,
        warnings,
        note: CONSTANTS_NOTE.into(),
    })
}

pub(crate) fn async_im_terms(req: &ScheduleRequest, cov: &Coverage, log_factor: f64) -> (f64, f64) {
    let one_minus = 1.0 - req.gamma;
    let eta0 = (1.0 / cov.t_mix_max as f64).min(one_minus).min(1.0 / req.k());
    let burn = 1.0 / (cov.mu_avg * one_minus * eta0);
    let scale = req.c_t * req.accuracy_log_sq() * log_factor;
    (
        scale / (cov.mu_avg * req.k() * one_minus.powi(5) * req.epsilon.powi(2)),
        scale * burn,
    )
}

/// Importance-averaging schedule. Requires only collective coverage (`mu_avg > 0`).
pub fn asynq_im_schedule(req: &ScheduleRequest) -> Result<Schedule> {
    req.validate()?;
    let cov = req.coverage()?;
    if !(cov.mu_avg > 0.0) {
        return Err(Error::Inapplicable(
            "importance-averaging guarantee is inapplicable: the agents do not collectively cover every pair (mu_avg = 0)"
                .into(),
        ));
    }
    let one_minus = 1.0 - req.gamma;
    let eta0 = (1.0 / cov.t_mix_max as f64).min(one_minus).min(1.0 / req.k());
    let burn_in = 1.0 / (cov.mu_avg * one_minus * eta0);
    let bound = |t: f64| {
        let (a, b) = async_im_terms(req, &cov, async_log(req, t));
        a + b
    };
    let (a1, b1) = async_im_terms(req, &cov, 1.0);
    let t_bound = resolve_horizon(a1 + b1, bound);
    let t_log = t_bound.max(2.0);
    let eta = req.c_eta * (req.k() * one_minus.powi(4) * req.epsilon.powi(2)).min(eta0) / async_log(req, t_log);
    let tau_max = async_tau_max(req, eta);
    Ok(Schedule {
        algorithm: Algorithm::AsyncImportance,
        eta,
        tau_min: None,
        tau_max,
        t_min: round_to_period(t_bound, tau_max),
        t_bound,
        burn_in,
        warnings: Vec::new(),
        note: CONSTANTS_NOTE.into(),
    })
}

/// Dispatches on `req.algorithm`.
pub fn schedule(req: &ScheduleRequest) -> Result<Schedule> {
    match req.algorithm {
        Algorithm::Sync => syncq_schedule(req),
        Algorithm::AsyncEqual => asynq_eq_schedule(req),
        Algorithm::AsyncImportance => asynq_im_schedule(req),
    }
}
