//! Federated Q-learning loops with periodic server-side averaging.
//!
//! Both loops keep `K` local Q-tables initialized to a common `Q_0`. At every
//! iteration each agent applies one local Q-learning update from its own random
//! stream; every `tau` iterations the server replaces all local tables by a
//! per-entry weighted average of them.
//!
//! * [`FedSynQ`] draws a fresh next state for every `(s, a)` per iteration
//!   (generative model) and averages with equal weights.
//! * [`FedAsynQ`] follows one Markovian trajectory per agent and updates a single
//!   entry per iteration; averaging uses either equal weights or importance
//!   weights `(1 - eta)^{-N_k(s,a)}` normalized over agents, where `N_k(s,a)` is
//!   the number of visits by agent `k` during the current window.

use serde::{Deserialize, Serialize};

use crate::chains::BehaviorPolicy;
use crate::error::{Error, Result};
use crate::mdp::{QTable, TabularMdp};
use crate::samplers::{generative_draw_into, markov_step, RngStream, Transition};

/// Per-agent learner state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub q: QTable,
    /// Current trajectory state (asynchronous sampling only).
    pub current_state: usize,
    /// Visits to each pair, row-major, since the last synchronization.
    pub visits: Vec<u32>,
}

impl AgentState {
    pub fn new(q: QTable, current_state: usize) -> Self {
        let n = q.n_states() * q.n_actions();
        AgentState {
            q,
            current_state,
            visits: vec![0; n],
        }
    }

    /// Iterations elapsed in the current window (asynchronous sampling).
    pub fn window_len(&self) -> u64 {
        self.visits.iter().map(|&v| v as u64).sum()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Invalid(format!("learning rate {eta} not in [0,1]")));
    }
    Ok(())
}

/// One synchronous Q-learning step: every entry moves towards
/// `r(s,a) + gamma * max_a' q(draw(s,a), a')`, all using the pre-update table.
pub fn sync_local_update(mdp: &TabularMdp, q: &QTable, draws: &[usize], eta: f64) -> QTable {
    let mut out = q.clone();
    sync_update_in_place(mdp, &mut out, draws, eta, &mut Vec::new());
    out
}

fn sync_update_in_place(
    mdp: &TabularMdp,
    q: &mut QTable,
    draws: &[usize],
    eta: f64,
    v_buf: &mut Vec<f64>,
) {
    let gamma = mdp.gamma();
    v_buf.clear();
    v_buf.extend((0..q.n_states()).map(|s| q.max_row(s)));
    let rewards = mdp.rewards();
    for (i, (entry, &next)) in q.as_mut_slice().iter_mut().zip(draws).enumerate() {
        *entry = (1.0 - eta) * *entry + eta * (rewards[i] + gamma * v_buf[next]);
    }
}

/// One asynchronous Q-learning step on the single entry `(tr.s, tr.a)`.
/// The visit counter of that entry increments and the agent moves to `tr.s_next`.
pub fn async_local_update(agent: &mut AgentState, tr: &Transition, eta: f64, gamma: f64) -> Result<()> {
    if tr.s != agent.current_state {
        return Err(Error::Invalid(format!(
            "transition starts in state {} but the agent is in state {}",
            tr.s, agent.current_state
        )));
    }
    apply_async(agent, tr, eta, gamma);
    Ok(())
}

#[inline]
fn apply_async(agent: &mut AgentState, tr: &Transition, eta: f64, gamma: f64) {
    let target = tr.r + gamma * agent.q.max_row(tr.s_next);
    let old = agent.q.get(tr.s, tr.a);
    agent.q.set(tr.s, tr.a, (1.0 - eta) * old + eta * target);
    agent.visits[tr.s * agent.q.n_actions() + tr.a] += 1;
    agent.current_state = tr.s_next;
}

/// Per-pair aggregation weights, stored pair-major: `value(k, pair)` is
/// `alpha^k(s,a)` for `pair = s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    n_agents: usize,
    n_pairs: usize,
    values: Vec<f64>,
}

impl AggregationWeights {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    #[inline]
    pub fn value(&self, agent: usize, pair: usize) -> f64 {
        self.values[pair * self.n_agents + agent]
    }

    /// Weights of all agents for one pair.
    pub fn pair(&self, pair: usize) -> &[f64] {
        &self.values[pair * self.n_agents..(pair + 1) * self.n_agents]
    }

    /// Compensated sum of the weights of one pair.
    pub fn pair_sum(&self, pair: usize) -> f64 {
        compensated_sum(self.pair(pair).iter().copied())
    }
}

/// Neumaier summation.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Uniform weights `1/K` on every pair.
pub fn equal_weights(n_agents: usize, n_pairs: usize) -> AggregationWeights {
    assert!(n_agents >= 1, "need at least one agent");
    AggregationWeights {
        n_agents,
        n_pairs,
        values: vec![1.0 / n_agents as f64; n_agents * n_pairs],
    }
}

/// Importance weights `(1-eta)^{-N_k} / sum_k' (1-eta)^{-N_k'}` per pair,
/// evaluated in log space with a max shift so large counts cannot overflow.
pub fn importance_weights(visit_counts: &[&[u32]], eta: f64) -> Result<AggregationWeights> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Invalid(format!(
            "importance weights need a learning rate in (0,1), got {eta}"
        )));
    }
    let n_agents = visit_counts.len();
    if n_agents == 0 {
        return Err(Error::Invalid("importance weights need at least one agent".into()));
    }
    let n_pairs = visit_counts[0].len();
    if visit_counts.iter().any(|v| v.len() != n_pairs) {
        return Err(Error::Invalid("visit count vectors differ in length".into()));
    }
    // log (1-eta)^{-N} = N * (-ln(1-eta))
    let rate = -(-eta).ln_1p();
    let mut values = vec![0.0; n_agents * n_pairs];
    let mut logs = vec![0.0; n_agents];
    for pair in 0..n_pairs {
        for (l, counts) in logs.iter_mut().zip(visit_counts) {
            *l = counts[pair] as f64 * rate;
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut values[pair * n_agents..(pair + 1) * n_agents];
        let mut total = 0.0;
        for (w, &l) in out.iter_mut().zip(&logs) {
            *w = (l - top).exp();
            total += *w;
        }
        out.iter_mut().for_each(|w| *w /= total);
    }
    Ok(AggregationWeights {
        n_agents,
        n_pairs,
        values,
    })
}

/// `Q(s,a) = sum_k alpha^k(s,a) Q^k(s,a)`, summed over agents in ascending order.
pub fn aggregate(locals: &[&QTable], weights: &AggregationWeights) -> Result<QTable> {
    let first = locals
        .first()
        .ok_or_else(|| Error::Invalid("nothing to aggregate".into()))?;
    let shape = first.shape();
    if let Some(bad) = locals.iter().find(|q| q.shape() != shape) {
        return Err(Error::ShapeMismatch {
            expected: shape,
            got: bad.shape(),
        });
    }
    if weights.n_agents != locals.len() || weights.n_pairs != shape.0 * shape.1 {
        return Err(Error::Invalid(format!(
            "weights cover {} agents x {} pairs, tables are {} x {}",
            weights.n_agents,
            weights.n_pairs,
            locals.len(),
            shape.0 * shape.1
        )));
    }
    let mut out = QTable::zeros(shape.0, shape.1);
    for (pair, entry) in out.as_mut_slice().iter_mut().enumerate() {
        let w = weights.pair(pair);
        let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for (k, q) in locals.iter().enumerate() {
            let v = q.as_slice()[pair];
            acc += w[k] * v;
            if w[k] > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        // Rounding may push a convex combination just outside its hull.
        *entry = if lo <= hi { acc.clamp(lo, hi) } else { acc };
    }
    Ok(out)
}

/// Server-side averaging rule for [`FedAsynQ`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationScheme {
    /// `alpha = 1/K`.
    #[serde(rename = "eq_avg")]
    Equal,
    /// Visit-count importance weights using the run's learning rate.
    #[serde(rename = "im_avg")]
    Importance,
}

impl AggregationScheme {
    pub fn label(&self) -> &'static str {
        match self {
            AggregationScheme::Equal => "eq_avg",
            AggregationScheme::Importance => "im_avg",
        }
    }

    fn weights(&self, agents: &[AgentState], eta: f64) -> Result<AggregationWeights> {
        let n_pairs = agents[0].visits.len();
        match self {
            AggregationScheme::Equal => Ok(equal_weights(agents.len(), n_pairs)),
            AggregationScheme::Importance => {
                let counts: Vec<&[u32]> = agents.iter().map(|a| a.visits.as_slice()).collect();
                importance_weights(&counts, eta)
            }
        }
    }
}

/// Hooks into a run; used by invariant checks and instrumentation.
pub trait Observer {
    /// After all agents finished their local update of iteration `t`.
    fn after_local(&mut self, _t: usize, _agents: &[AgentState]) {}

    /// After the server computed the aggregate at sync point `t`, before the
    /// local tables are overwritten. `agents` still hold their pre-averaging tables.
    fn after_aggregate(
        &mut self,
        _t: usize,
        _agents: &[AgentState],
        _weights: &AggregationWeights,
        _global: &QTable,
    ) {
    }
}

/// Observer that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl Observer for NoObserver {}

/// Error of the global table at one sync point.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub t: usize,
    pub linf_error: f64,
    pub normalized_error: f64,
    pub snapshot: Option<QTable>,
}

/// Echo of the run parameters stored alongside a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub algorithm: String,
    pub n_agents: usize,
    pub eta: f64,
    pub tau: usize,
    pub horizon: usize,
}

/// Errors of the global estimate at `t = 0` and at every sync point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub info: RunInfo,
    pub points: Vec<TracePoint>,
}

impl RunTrace {
    pub fn final_point(&self) -> &TracePoint {
        self.points.last().expect("trace always has the t = 0 point")
    }

    /// The point recorded at iteration `t`, if `t` is a sync point.
    pub fn at(&self, t: usize) -> Option<&TracePoint> {
        self.points.iter().find(|p| p.t == t)
    }
}

/// What the trace records.
#[derive(Debug, Clone, Copy)]
pub struct TraceConfig<'a> {
    /// Reference table for the error metrics (normally `Q*`).
    pub q_star: &'a QTable,
    /// Keep a full copy of the global table at every sync point.
    pub snapshots: bool,
}

struct Recorder<'a> {
    cfg: TraceConfig<'a>,
    gamma: f64,
    points: Vec<TracePoint>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: TraceConfig<'a>, gamma: f64) -> Self {
        Recorder {
            cfg,
            gamma,
            points: Vec::new(),
        }
    }

    fn record(&mut self, t: usize, global: &QTable) -> Result<()> {
        let err = global.linf_distance(self.cfg.q_star)?;
        self.points.push(TracePoint {
            t,
            linf_error: err,
            normalized_error: (1.0 - self.gamma) * err,
            snapshot: self.cfg.snapshots.then(|| global.clone()),
        });
        Ok(())
    }
}

/// Result of a federated run: the synchronized table at `T` and its trace.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub q: QTable,
    pub trace: RunTrace,
}

fn check_common(mdp: &TabularMdp, q0: &QTable, tau: usize, horizon: usize) -> Result<()> {
    if tau == 0 {
        return Err(Error::Invalid("synchronization period must be at least 1".into()));
    }
    if horizon % tau != 0 {
        return Err(Error::Divisibility { horizon, tau });
    }
    if q0.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::ShapeMismatch {
            expected: (mdp.n_states(), mdp.n_actions()),
            got: q0.shape(),
        });
    }
    let bound = mdp.value_bound();
    for s in 0..q0.n_states() {
        for a in 0..q0.n_actions() {
            let v = q0.get(s, a);
            if !(0.0..=bound).contains(&v) {
                return Err(Error::InitRange {
                    state: s,
                    action: a,
                    value: v,
                    bound,
                });
            }
        }
    }
    Ok(())
}

/// Replaces every local table by `global` and clears the window counters.
fn synchronize(agents: &mut [AgentState], global: &QTable) {
    for agent in agents.iter_mut() {
        agent.q.as_mut_slice().copy_from_slice(global.as_slice());
        agent.visits.iter_mut().for_each(|v| *v = 0);
    }
}

fn aggregate_agents(agents: &[AgentState], weights: &AggregationWeights) -> Result<QTable> {
    let tables: Vec<&QTable> = agents.iter().map(|a| &a.q).collect();
    aggregate(&tables, weights)
}

/// Federated synchronous Q-learning with equal-weight periodic averaging.
#[derive(Debug, Clone, Copy)]
pub struct FedSynQ<'a> {
    pub mdp: &'a TabularMdp,
    pub eta: f64,
    pub tau: usize,
    pub horizon: usize,
}

impl FedSynQ<'_> {
    /// Runs one agent per stream in `streams`.
    pub fn run(
        &self,
        q0: &QTable,
        streams: &mut [RngStream],
        trace: TraceConfig<'_>,
        observer: &mut dyn Observer,
    ) -> Result<RunOutput> {
        let mdp = self.mdp;
        check_common(mdp, q0, self.tau, self.horizon)?;
        check_eta(self.eta)?;
        let k = streams.len();
        if k == 0 {
            return Err(Error::Invalid("need at least one agent".into()));
        }
        let mut agents: Vec<AgentState> = (0..k).map(|_| AgentState::new(q0.clone(), 0)).collect();
        let weights = equal_weights(k, mdp.n_pairs());
        let mut rec = Recorder::new(trace, mdp.gamma());
        rec.record(0, q0)?;
        let mut global = q0.clone();
        let mut draws = Vec::with_capacity(mdp.n_pairs());
        let mut v_buf = Vec::with_capacity(mdp.n_states());

        for t in 1..=self.horizon {
            for (agent, rng) in agents.iter_mut().zip(streams.iter_mut()) {
                generative_draw_into(mdp, rng, &mut draws);
                sync_update_in_place(mdp, &mut agent.q, &draws, self.eta, &mut v_buf);
            }
            observer.after_local(t, &agents);
            if t % self.tau == 0 {
                global = aggregate_agents(&agents, &weights)?;
                observer.after_aggregate(t, &agents, &weights, &global);
                synchronize(&mut agents, &global);
                rec.record(t, &global)?;
            }
        }
        Ok(RunOutput {
            q: global,
            trace: RunTrace {
                info: RunInfo {
                    algorithm: "fed_syn_q".into(),
                    n_agents: k,
                    eta: self.eta,
                    tau: self.tau,
                    horizon: self.horizon,
                },
                points: rec.points,
            },
        })
    }
}

/// Federated asynchronous Q-learning along per-agent Markovian trajectories.
#[derive(Debug, Clone, Copy)]
pub struct FedAsynQ<'a> {
    pub mdp: &'a TabularMdp,
    /// Behavior policy of each agent; its length is `K`.
    pub policies: &'a [BehaviorPolicy],
    pub scheme: AggregationScheme,
    pub eta: f64,
    pub tau: usize,
    pub horizon: usize,
}

impl FedAsynQ<'_> {
    pub fn run(
        &self,
        q0: &QTable,
        initial_states: &[usize],
        streams: &mut [RngStream],
        trace: TraceConfig<'_>,
        observer: &mut dyn Observer,
    ) -> Result<RunOutput> {
        let mdp = self.mdp;
        check_common(mdp, q0, self.tau, self.horizon)?;
        check_eta(self.eta)?;
        if self.scheme == AggregationScheme::Importance && !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Invalid(format!(
                "importance averaging needs a learning rate in (0,1), got {}",
                self.eta
            )));
        }
        let k = self.policies.len();
        if k == 0 {
            return Err(Error::Invalid("need at least one agent".into()));
        }
        if streams.len() != k || initial_states.len() != k {
            return Err(Error::Invalid(format!(
                "{k} policies but {} streams and {} initial states",
                streams.len(),
                initial_states.len()
            )));
        }
        for p in self.policies {
            p.check_compatible(mdp)?;
        }
        if let Some(&s) = initial_states.iter().find(|&&s| s >= mdp.n_states()) {
            return Err(Error::Invalid(format!("initial state {s} out of range")));
        }

        let mut agents: Vec<AgentState> = initial_states
            .iter()
            .map(|&s| AgentState::new(q0.clone(), s))
            .collect();
        let mut rec = Recorder::new(trace, mdp.gamma());
        rec.record(0, q0)?;
        let mut global = q0.clone();
        let gamma = mdp.gamma();

        for t in 1..=self.horizon {
            for ((agent, rng), policy) in agents.iter_mut().zip(streams.iter_mut()).zip(self.policies) {
                let tr = markov_step(mdp, policy, agent.current_state, rng);
                apply_async(agent, &tr, self.eta, gamma);
            }
            observer.after_local(t, &agents);
            if t % self.tau == 0 {
                let weights = self.scheme.weights(&agents, self.eta)?;
                global = aggregate_agents(&agents, &weights)?;
                observer.after_aggregate(t, &agents, &weights, &global);
                synchronize(&mut agents, &global);
                rec.record(t, &global)?;
            }
        }
        Ok(RunOutput {
            q: global,
            trace: RunTrace {
                info: RunInfo {
                    algorithm: self.scheme.label().into(),
                    n_agents: k,
                    eta: self.eta,
                    tau: self.tau,
                    horizon: self.horizon,
                },
                points: rec.points,
            },
        })
    }
}
