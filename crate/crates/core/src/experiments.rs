//! The synthetic two-state benchmark and the three sweep protocols run on it.
//!
//! The benchmark MDP has states `{0, 1}` and `m` actions, reward 1 in state 1 and
//! 0 in state 0, and per-action self-transition probabilities `p_a = P(0|0,a)`,
//! `q_a = P(1|1,a)` drawn uniformly from configurable ranges. Policy `i` always
//! plays action `i`, so an agent following it only ever visits `(0,i)` and `(1,i)`;
//! agent `k` gets policy `i` with `i ≡ k (mod m)`.
//!
//! Agents and actions are 1-based in configs and outputs, 0-based internally.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::{
    analyze_agents, induced_chain, state_marginal, stationary_distribution, BehaviorPolicy, CoverageStats,
    DEFAULT_MIXING_CAP, DEFAULT_STATIONARY_CAP, DEFAULT_STATIONARY_TOL,
};
use crate::error::{Error, Result};
use crate::federated::{AggregationScheme, FedAsynQ, FedSynQ, NoObserver, RunTrace, TraceConfig};
use crate::mdp::{optimal_q, QTable, TabularMdp, DEFAULT_VI_TOL};
use crate::samplers::{agent_streams, draw_initial_states, InitMode, RngStream, STREAM_INIT, STREAM_MDP, STREAM_Q0};

/// Parameters of the synthetic two-state MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMdpSpec {
    /// Number of actions.
    pub m: usize,
    #[serde(default = "default_range")]
    pub p_range: [f64; 2],
    #[serde(default = "default_range")]
    pub q_range: [f64; 2],
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_range() -> [f64; 2] {
    [0.4, 0.6]
}

fn default_gamma() -> f64 {
    0.9
}

impl SyntheticMdpSpec {
    pub fn new(m: usize) -> Self {
        SyntheticMdpSpec {
            m,
            p_range: default_range(),
            q_range: default_range(),
            gamma: default_gamma(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Invalid("synthetic MDP needs at least one action".into()));
        }
        for (name, [lo, hi]) in [("p_range", self.p_range), ("q_range", self.q_range)] {
            if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
                return Err(Error::Invalid(format!("{name} [{lo}, {hi}] must lie inside (0,1)")));
            }
        }
        Ok(())
    }
}

/// Draws the synthetic MDP and its `m` single-action policies. Per action, `p_a`
/// is drawn before `q_a`, one uniform variate each.
pub fn build_synthetic_mdp(spec: &SyntheticMdpSpec, rng: &mut RngStream) -> Result<(TabularMdp, Vec<BehaviorPolicy>)> {
    spec.validate()?;
    let m = spec.m;
    let draw = |rng: &mut RngStream, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.uniform();
    let stays: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let p = draw(rng, spec.p_range);
            let q = draw(rng, spec.q_range);
            (p, q)
        })
        .collect();
    let mut reward = Vec::with_capacity(2 * m);
    let mut transition = Vec::with_capacity(4 * m);
    for &(p, _) in &stays {
        reward.push(0.0);
        transition.extend([p, 1.0 - p]);
    }
    for &(_, q) in &stays {
        reward.push(1.0);
        transition.extend([1.0 - q, q]);
    }
    let mdp = TabularMdp::new(2, m, spec.gamma, reward, transition)?;
    let policies = (0..m).map(|a| BehaviorPolicy::deterministic(2, m, a)).collect();
    Ok((mdp, policies))
}

/// 1-based policy index of each of `n_agents` agents: agent `k` gets `((k-1) mod m) + 1`.
pub fn assign_policies(n_agents: usize, m: usize) -> Vec<usize> {
    assert!(m >= 1, "need at least one policy");
    (1..=n_agents).map(|k| (k - 1) % m + 1).collect()
}

/// Policies of `n_agents` agents drawn from `pool` by [`assign_policies`].
pub fn agent_policies(pool: &[BehaviorPolicy], n_agents: usize) -> Vec<BehaviorPolicy> {
    assign_policies(n_agents, pool.len())
        .into_iter()
        .map(|i| pool[i - 1].clone())
        .collect()
}

/// I.i.d. entries uniform on `(0, 1/(1-gamma)]`.
pub fn init_q0(n_states: usize, n_actions: usize, gamma: f64, rng: &mut RngStream) -> QTable {
    let bound = 1.0 / (1.0 - gamma);
    let values = (0..n_states * n_actions)
        .map(|_| bound * (1.0 - rng.uniform()))
        .collect();
    QTable::from_vec(n_states, n_actions, values).expect("finite by construction")
}

/// How the initial Q-table is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Q0Init {
    /// Uniform on `(0, 1/(1-gamma)]` per entry.
    Uniform,
    Constant { value: f64 },
}

impl Default for Q0Init {
    fn default() -> Self {
        Q0Init::Uniform
    }
}

impl Q0Init {
    pub fn build(&self, mdp: &TabularMdp, rng: &mut RngStream) -> Result<QTable> {
        match *self {
            Q0Init::Uniform => Ok(init_q0(mdp.n_states(), mdp.n_actions(), mdp.gamma(), rng)),
            Q0Init::Constant { value } => QTable::from_vec(
                mdp.n_states(),
                mdp.n_actions(),
                vec![value; mdp.n_pairs()],
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Normalized error along the run, for every sync point.
    ErrorVsSamples,
    /// Inverse squared error at `T` as the number of agents grows.
    #[serde(alias = "speedup_vs_K")]
    SpeedupVsK,
    /// Normalized error at `T` as the synchronization period grows.
    ErrorVsTau,
}

impl Protocol {
    pub fn label(&self) -> &'static str {
        match self {
            Protocol::ErrorVsSamples => "error_vs_samples",
            Protocol::SpeedupVsK => "speedup_vs_k",
            Protocol::ErrorVsTau => "error_vs_tau",
        }
    }
}

/// Learning rate per aggregation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaConfig {
    pub eq_avg: f64,
    pub im_avg: f64,
}

impl EtaConfig {
    pub fn for_scheme(&self, scheme: AggregationScheme) -> f64 {
        match scheme {
            AggregationScheme::Equal => self.eq_avg,
            AggregationScheme::Importance => self.im_avg,
        }
    }
}

fn default_sims() -> usize {
    100
}

fn default_algorithms() -> Vec<AggregationScheme> {
    vec![AggregationScheme::Equal, AggregationScheme::Importance]
}

/// A sweep over agents, periods and aggregation schemes on the synthetic MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub synthetic: SyntheticMdpSpec,
    pub agents: Vec<usize>,
    pub taus: Vec<usize>,
    pub horizon: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<AggregationScheme>,
    pub eta: EtaConfig,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
    pub seed: u64,
    /// Draw one MDP for all simulations instead of one per simulation.
    #[serde(default)]
    pub shared_mdp: bool,
    #[serde(default)]
    pub init: InitMode,
}

pub const PRESET_FIG3: &str = include_str!("../presets/fig3.json");
pub const PRESET_FIG4: &str = include_str!("../presets/fig4.json");
pub const PRESET_FIG5: &str = include_str!("../presets/fig5.json");

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One of the checked-in presets: `fig3`, `fig4` or `fig5`.
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "fig3" => PRESET_FIG3,
            "fig4" => PRESET_FIG4,
            "fig5" => PRESET_FIG5,
            other => return Err(Error::Invalid(format!("unknown preset {other:?}"))),
        };
        Self::from_json(text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        if self.agents.is_empty() || self.agents.contains(&0) {
            return Err(Error::Invalid("agents must be a non-empty list of positive counts".into()));
        }
        if self.taus.is_empty() || self.taus.contains(&0) {
            return Err(Error::Invalid("taus must be a non-empty list of positive periods".into()));
        }
        if self.algorithms.is_empty() || self.n_sims == 0 {
            return Err(Error::Invalid("need at least one algorithm and one simulation".into()));
        }
        for scheme in &self.algorithms {
            let eta = self.eta.for_scheme(*scheme);
            if !(eta > 0.0 && eta <= 1.0) || (*scheme == AggregationScheme::Importance && eta >= 1.0) {
                return Err(Error::Invalid(format!("learning rate {eta} invalid for {}", scheme.label())));
            }
        }
        if let Some(&tau) = self.taus.iter().find(|&&tau| self.horizon % tau != 0) {
            return Err(Error::Divisibility {
                horizon: self.horizon,
                tau,
            });
        }
        Ok(())
    }
}

/// One raw measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub protocol: Protocol,
    pub algorithm: AggregationScheme,
    pub agents: usize,
    pub tau: usize,
    pub eta: f64,
    pub seed: u64,
    pub t: usize,
    pub metric: &'static str,
    pub value: f64,
}

/// Mean and standard deviation of one metric over simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub protocol: Protocol,
    pub algorithm: AggregationScheme,
    pub agents: usize,
    pub tau: usize,
    pub eta: f64,
    pub t: usize,
    pub metric: &'static str,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub records: Vec<Record>,
    pub summary: Vec<SummaryRow>,
}

impl ProtocolResult {
    /// Summary row for one cell, time and metric.
    pub fn find(
        &self,
        algorithm: AggregationScheme,
        agents: usize,
        tau: usize,
        t: usize,
        metric: &str,
    ) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.algorithm == algorithm && r.agents == agents && r.tau == tau && r.t == t && r.metric == metric)
    }
}

pub const METRIC_NORMALIZED: &str = "normalized_error";
pub const METRIC_INV_SQ: &str = "inverse_squared_error";

/// Everything about a simulation that is shared across its cells.
struct SimContext {
    seed: u64,
    mdp: TabularMdp,
    pool: Vec<BehaviorPolicy>,
    q_star: QTable,
    q0: QTable,
}

fn sim_context(cfg: &ExperimentConfig, sim: usize) -> Result<SimContext> {
    let seed = cfg.seed.wrapping_add(sim as u64);
    let mdp_seed = if cfg.shared_mdp { cfg.seed } else { seed };
    let (mdp, pool) = build_synthetic_mdp(&cfg.synthetic, &mut RngStream::new(mdp_seed, 0, STREAM_MDP))?;
    let q_star = optimal_q(&mdp, DEFAULT_VI_TOL)?;
    let q0 = init_q0(2, cfg.synthetic.m, mdp.gamma(), &mut RngStream::new(seed, 0, STREAM_Q0));
    Ok(SimContext {
        seed,
        mdp,
        pool,
        q_star,
        q0,
    })
}

/// Initial states of `policies` under `mode`, using the dedicated init stream.
pub fn initial_states(
    mdp: &TabularMdp,
    policies: &[BehaviorPolicy],
    mode: InitMode,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let marginals = if mode == InitMode::Stationary {
        let mut out = Vec::with_capacity(policies.len());
        for p in policies {
            let chain = induced_chain(mdp, p)?;
            let st = stationary_distribution(
                &chain,
                &p.start_distribution(0),
                DEFAULT_STATIONARY_TOL,
                DEFAULT_STATIONARY_CAP,
            )?;
            out.push(state_marginal(&st.occupancy, mdp.n_actions()));
        }
        Some(out)
    } else {
        None
    };
    draw_initial_states(policies.len(), mdp.n_states(), mode, marginals.as_deref(), rng)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    algorithm: AggregationScheme,
    agents: usize,
    tau: usize,
}

fn run_cell(cfg: &ExperimentConfig, ctx: &SimContext, cell: Cell) -> Result<Vec<Record>> {
    let policies = agent_policies(&ctx.pool, cell.agents);
    let init = initial_states(&ctx.mdp, &policies, cfg.init, &mut RngStream::new(ctx.seed, 0, STREAM_INIT))?;
    let eta = cfg.eta.for_scheme(cell.algorithm);
    let out = FedAsynQ {
        mdp: &ctx.mdp,
        policies: &policies,
        scheme: cell.algorithm,
        eta,
        tau: cell.tau,
        horizon: cfg.horizon,
    }
    .run(
        &ctx.q0,
        &init,
        &mut agent_streams(ctx.seed, 0, cell.agents),
        TraceConfig {
            q_star: &ctx.q_star,
            snapshots: false,
        },
        &mut NoObserver,
    )?;
    let record = |t: usize, metric: &'static str, value: f64| Record {
        protocol: cfg.protocol,
        algorithm: cell.algorithm,
        agents: cell.agents,
        tau: cell.tau,
        eta,
        seed: ctx.seed,
        t,
        metric,
        value,
    };
    let last = out.trace.final_point();
    Ok(match cfg.protocol {
        Protocol::ErrorVsSamples => out
            .trace
            .points
            .iter()
            .map(|p| record(p.t, METRIC_NORMALIZED, p.normalized_error))
            .collect(),
        Protocol::SpeedupVsK => vec![
            record(last.t, METRIC_NORMALIZED, last.normalized_error),
            record(last.t, METRIC_INV_SQ, last.linf_error.powi(-2)),
        ],
        Protocol::ErrorVsTau => vec![record(last.t, METRIC_NORMALIZED, last.normalized_error)],
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every `(algorithm, K, tau, simulation)` cell of `cfg`.
///
/// Cells run on the current rayon pool; output order is fixed by the config
/// regardless of scheduling. `progress` is called with `(done, total)` after
/// each cell.
pub fn run_protocol(cfg: &ExperimentConfig, progress: Option<&(dyn Fn(usize, usize) + Sync)>) -> Result<ProtocolResult> {
    cfg.validate()?;
    let contexts: Vec<SimContext> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|sim| sim_context(cfg, sim))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &agents in &cfg.agents {
            for &tau in &cfg.taus {
                cells.push(Cell { algorithm, agents, tau });
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.n_sims).map(move |s| (c, s)))
        .collect();
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let per_job: Vec<Vec<Record>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let out = run_cell(cfg, &contexts[s], cells[c]);
            if let Some(report) = progress {
                report(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            }
            out
        })
        .collect::<Result<_>>()?;
    let records: Vec<Record> = per_job.into_iter().flatten().collect();
    Ok(ProtocolResult {
        summary: summarize(&records),
        records,
    })
}

/// Groups records by cell, time and metric, keeping first-appearance order.
pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut keys: Vec<&Record> = Vec::new();
    let mut index: BTreeMap<(String, usize, usize, u64, usize, &'static str), usize> = BTreeMap::new();
    for r in records {
        let key = (r.algorithm.label().to_string(), r.agents, r.tau, r.eta.to_bits(), r.t, r.metric);
        let id = *index.entry(key).or_insert_with(|| {
            keys.push(r);
            keys.len() - 1
        });
        let slot = (id, 0);
        if !groups.contains_key(&slot) {
            order.push(slot);
        }
        groups.entry(slot).or_default().push(r.value);
    }
    order
        .into_iter()
        .map(|slot| {
            let r = keys[slot.0];
            let values = &groups[&slot];
            let (mean, std) = mean_std(values);
            SummaryRow {
                protocol: r.protocol,
                algorithm: r.algorithm,
                agents: r.agents,
                tau: r.tau,
                eta: r.eta,
                t: r.t,
                metric: r.metric,
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("csv output failed: {e}"))
}

pub const RECORD_HEADER: [&str; 9] = ["protocol", "algorithm", "K", "tau", "eta", "seed", "t", "metric_name", "value"];
pub const SUMMARY_HEADER: [&str; 10] = ["protocol", "algorithm", "K", "tau", "eta", "t", "metric_name", "n", "mean", "std"];
pub const TRACE_HEADER: [&str; 9] = [
    "run_id",
    "algorithm",
    "K",
    "tau",
    "eta",
    "seed",
    "t",
    "linf_error",
    "normalized_error",
];

pub fn write_records<W: Write>(out: W, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.protocol.label().to_string(),
            r.algorithm.label().to_string(),
            r.agents.to_string(),
            r.tau.to_string(),
            r.eta.to_string(),
            r.seed.to_string(),
            r.t.to_string(),
            r.metric.to_string(),
            r.value.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.protocol.label().to_string(),
            r.algorithm.label().to_string(),
            r.agents.to_string(),
            r.tau.to_string(),
            r.eta.to_string(),
            r.t.to_string(),
            r.metric.to_string(),
            r.n.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// A trace together with the identifiers of the run that produced it.
#[derive(Debug, Clone)]
pub struct TracedRun {
    pub run_id: u32,
    pub seed: u64,
    pub trace: RunTrace,
}

pub fn write_traces<W: Write>(out: W, runs: &[TracedRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for run in runs {
        let info = &run.trace.info;
        for p in &run.trace.points {
            w.write_record([
                run.run_id.to_string(),
                info.algorithm.clone(),
                info.n_agents.to_string(),
                info.tau.to_string(),
                info.eta.to_string(),
                run.seed.to_string(),
                p.t.to_string(),
                p.linf_error.to_string(),
                p.normalized_error.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

/// Algorithm of a single run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunAlgorithm {
    FedSynQ,
    EqAvg,
    ImAvg,
}

fn default_runs() -> u32 {
    1
}

/// A single (possibly replicated) federated run on an explicit or synthetic MDP.
///
/// Exactly one of `mdp` and `synthetic` must be present. With an explicit MDP,
/// asynchronous runs need `policies`; agents take them round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: RunAlgorithm,
    #[serde(default)]
    pub mdp: Option<TabularMdp>,
    #[serde(default)]
    pub synthetic: Option<SyntheticMdpSpec>,
    #[serde(default)]
    pub policies: Option<Vec<BehaviorPolicy>>,
    pub agents: usize,
    pub eta: f64,
    pub tau: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: u32,
    #[serde(default)]
    pub q0: Q0Init,
    #[serde(default)]
    pub init: InitMode,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))
    }

    fn problem(&self, run_id: u32) -> Result<(TabularMdp, Vec<BehaviorPolicy>)> {
        match (&self.mdp, &self.synthetic) {
            (Some(mdp), None) => Ok((mdp.clone(), self.policies.clone().unwrap_or_default())),
            (None, Some(spec)) => {
                let (mdp, pool) = build_synthetic_mdp(spec, &mut RngStream::new(self.seed, run_id, STREAM_MDP))?;
                Ok((mdp, self.policies.clone().unwrap_or(pool)))
            }
            _ => Err(Error::Invalid("exactly one of `mdp` and `synthetic` must be given".into())),
        }
    }
}

/// Executes every replication of `cfg` and returns their traces.
pub fn run_single(cfg: &RunConfig) -> Result<Vec<TracedRun>> {
    if cfg.agents == 0 {
        return Err(Error::Invalid("agents must be positive".into()));
    }
    (0..cfg.n_runs)
        .into_par_iter()
        .map(|run_id| {
            let (mdp, pool) = cfg.problem(run_id)?;
            let q_star = optimal_q(&mdp, DEFAULT_VI_TOL)?;
            let q0 = cfg.q0.build(&mdp, &mut RngStream::new(cfg.seed, run_id, STREAM_Q0))?;
            let mut streams = agent_streams(cfg.seed, run_id, cfg.agents);
            let trace = TraceConfig {
                q_star: &q_star,
                snapshots: false,
            };
            let out = match cfg.algorithm {
                RunAlgorithm::FedSynQ => FedSynQ {
                    mdp: &mdp,
                    eta: cfg.eta,
                    tau: cfg.tau,
                    horizon: cfg.horizon,
                }
                .run(&q0, &mut streams, trace, &mut NoObserver)?,
                RunAlgorithm::EqAvg | RunAlgorithm::ImAvg => {
                    if pool.is_empty() {
                        return Err(Error::Invalid("asynchronous runs need behavior policies".into()));
                    }
                    let policies = agent_policies(&pool, cfg.agents);
                    let init = initial_states(&mdp, &policies, cfg.init, &mut RngStream::new(cfg.seed, run_id, STREAM_INIT))?;
                    let scheme = if cfg.algorithm == RunAlgorithm::EqAvg {
                        AggregationScheme::Equal
                    } else {
                        AggregationScheme::Importance
                    };
                    FedAsynQ {
                        mdp: &mdp,
                        policies: &policies,
                        scheme,
                        eta: cfg.eta,
                        tau: cfg.tau,
                        horizon: cfg.horizon,
                    }
                    .run(&q0, &init, &mut streams, trace, &mut NoObserver)?
                }
            };
            Ok(TracedRun {
                run_id,
                seed: cfg.seed,
                trace: out.trace,
            })
        })
        .collect()
}

fn default_start() -> usize {
    0
}

fn default_mixing_cap() -> usize {
    DEFAULT_MIXING_CAP
}

/// Coverage analysis request: an MDP (explicit or synthetic), the policy pool and
/// the number of agents drawing from it round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    #[serde(default)]
    pub mdp: Option<TabularMdp>,
    #[serde(default)]
    pub synthetic: Option<SyntheticMdpSpec>,
    #[serde(default)]
    pub policies: Option<Vec<BehaviorPolicy>>,
    pub agents: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_state: usize,
    #[serde(default = "default_mixing_cap")]
    pub mixing_cap: usize,
}

impl AnalyzeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Coverage statistics of the configured agents.
pub fn analyze(cfg: &AnalyzeConfig) -> Result<CoverageStats> {
    if cfg.agents == 0 {
        return Err(Error::Invalid("agents must be positive".into()));
    }
    let (mdp, pool) = match (&cfg.mdp, &cfg.synthetic) {
        (Some(mdp), None) => (mdp.clone(), cfg.policies.clone().unwrap_or_default()),
        (None, Some(spec)) => {
            let (mdp, pool) = build_synthetic_mdp(spec, &mut RngStream::new(cfg.seed, 0, STREAM_MDP))?;
            (mdp, cfg.policies.clone().unwrap_or(pool))
        }
        _ => return Err(Error::Invalid("exactly one of `mdp` and `synthetic` must be given".into())),
    };
    if pool.is_empty() {
        return Err(Error::Invalid("coverage analysis needs at least one policy".into()));
    }
    let policies = agent_policies(&pool, cfg.agents);
    analyze_agents(&mdp, &policies, &vec![cfg.start_state; cfg.agents], cfg.mixing_cap)
}
