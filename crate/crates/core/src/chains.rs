//! The state-action Markov chain induced by a behavior policy, and the coverage
//! statistics derived from it.
//!
//! Pairs `(s, a)` are indexed row-major as `s * n_actions + a`, matching [`QTable`]
//! and the reward layout of [`TabularMdp`].
//!
//! [`QTable`]: crate::mdp::QTable

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, ROW_SUM_TOL};

pub const DEFAULT_STATIONARY_TOL: f64 = 1e-12;
pub const DEFAULT_STATIONARY_CAP: usize = 1_000_000;
pub const DEFAULT_MIXING_CAP: usize = 100_000;

/// Total-variation threshold defining the mixing time.
pub const MIXING_THRESHOLD: f64 = 0.25;

/// A stationary behavior policy: one probability row over actions per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct BehaviorPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for BehaviorPolicy {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        BehaviorPolicy::from_rows(rows)
    }
}

impl From<BehaviorPolicy> for Vec<Vec<f64>> {
    fn from(p: BehaviorPolicy) -> Self {
        p.probs.chunks(p.n_actions).map(|c| c.to_vec()).collect()
    }
}

impl BehaviorPolicy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Invalid("policy must have at least one state and action".into()));
        }
        for (s, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Invalid(format!(
                    "policy row for state {s} has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Invalid(format!("negative probability in policy row {s}")));
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                return Err(Error::Invalid(format!("policy row sum {sum} at state {s}")));
            }
        }
        Ok(BehaviorPolicy {
            n_states,
            n_actions,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    /// Always plays `action`, in every state.
    pub fn deterministic(n_states: usize, n_actions: usize, action: usize) -> Self {
        assert!(action < n_actions, "action {action} out of range");
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            probs[s * n_actions + action] = 1.0;
        }
        BehaviorPolicy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        BehaviorPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `pi(. | s)`.
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn check_compatible(&self, mdp: &TabularMdp) -> Result<()> {
        if (self.n_states, self.n_actions) != (mdp.n_states(), mdp.n_actions()) {
            return Err(Error::ShapeMismatch {
                expected: (mdp.n_states(), mdp.n_actions()),
                got: (self.n_states, self.n_actions),
            });
        }
        Ok(())
    }

    /// Distribution of `(s_0, a_0)` when the trajectory starts in state `s0`.
    pub fn start_distribution(&self, s0: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.n_states * self.n_actions];
        d[s0 * self.n_actions..(s0 + 1) * self.n_actions].copy_from_slice(self.row(s0));
        d
    }
}

/// Dense kernel over state-action pairs:
/// `K((s,a), (s',a')) = P(s'|s,a) * pi(a'|s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionChain {
    n: usize,
    kernel: Vec<f64>,
}

impl StateActionChain {
    /// Wraps an explicit row-stochastic matrix given as `n * n` row-major entries.
    pub fn from_kernel(n: usize, kernel: Vec<f64>) -> Result<Self> {
        if n == 0 || kernel.len() != n * n {
            return Err(Error::Invalid(format!(
                "kernel of size {n} needs {} entries, got {}",
                n * n,
                kernel.len()
            )));
        }
        for (i, row) in kernel.chunks(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                return Err(Error::Invalid(format!("kernel row {i} is not a distribution (sum {sum})")));
            }
        }
        Ok(StateActionChain { n, kernel })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.kernel[i * self.n..(i + 1) * self.n]
    }

    /// `d * K`.
    pub fn step(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.step_into(d, &mut out);
        out
    }

    fn step_into(&self, d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &w) in d.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.row(i)) {
                *o += w * k;
            }
        }
    }

    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(j, _)| j)
    }

    fn reachable_from(&self, roots: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for r in roots {
            if !seen[r] {
                seen[r] = true;
                queue.push_back(r);
            }
        }
        while let Some(i) = queue.pop_front() {
            for j in self.successors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// Pairs that are recurrent and reachable from the support of `start`.
    ///
    /// A pair is recurrent iff every pair reachable from it can reach it back.
    pub fn recurrent_mask(&self, start: &[f64]) -> Vec<bool> {
        let roots = start
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i);
        let reachable = self.reachable_from(roots);
        let reach: Vec<Vec<bool>> = (0..self.n)
            .map(|i| {
                if reachable[i] {
                    self.reachable_from([i])
                } else {
                    Vec::new()
                }
            })
            .collect();
        (0..self.n)
            .map(|x| {
                reachable[x]
                    && reach[x]
                        .iter()
                        .enumerate()
                        .all(|(y, &hit)| !hit || reach[y][x])
            })
            .collect()
    }
}

/// Builds the state-action chain of `policy` on `mdp`.
pub fn induced_chain(mdp: &TabularMdp, policy: &BehaviorPolicy) -> Result<StateActionChain> {
    policy.check_compatible(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let mut kernel = vec![0.0; n * n];
    for s in 0..ns {
        for a in 0..na {
            let from = s * na + a;
            let p = mdp.transition_row(s, a);
            for (s2, &ps) in p.iter().enumerate() {
                for (a2, &pa) in policy.row(s2).iter().enumerate() {
                    kernel[from * n + s2 * na + a2] = ps * pa;
                }
            }
        }
    }
    Ok(StateActionChain { n, kernel })
}

/// Stationary occupancy on the recurrent part of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub occupancy: Vec<f64>,
    /// Recurrent pairs reachable from the start distribution.
    pub recurrent: Vec<bool>,
    pub iterations: usize,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `||mu K - mu||_1`.
pub fn stationary_residual(chain: &StateActionChain, mu: &[f64]) -> f64 {
    l1(&chain.step(mu), mu)
}

/// Stationary distribution reached from `start` by power iteration on the lazy
/// chain `(I + K) / 2`, which shares its stationary distributions with `K` and is
/// aperiodic. Entries outside the recurrent classes reachable from `start` are
/// set to exactly zero.
pub fn stationary_distribution(
    chain: &StateActionChain,
    start: &[f64],
    tol: f64,
    cap: usize,
) -> Result<Stationary> {
    if start.len() != chain.n {
        return Err(Error::Invalid(format!(
            "start distribution has {} entries, chain has {}",
            start.len(),
            chain.n
        )));
    }
    let total: f64 = start.iter().sum();
    if start.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
        return Err(Error::Invalid("start distribution must be nonnegative with positive mass".into()));
    }
    let recurrent = chain.recurrent_mask(start);
    let mut mu: Vec<f64> = start.iter().map(|p| p / total).collect();
    let mut next = vec![0.0; chain.n];
    for it in 0..cap {
        chain.step_into(&mu, &mut next);
        for (x, m) in next.iter_mut().zip(&mu) {
            *x = 0.5 * (*x + m);
        }
        std::mem::swap(&mut mu, &mut next);
        // Check every few sweeps; the residual costs another matrix-vector product.
        if it % 8 == 7 || it + 1 == cap {
            let candidate = project(&mu, &recurrent);
            if stationary_residual(chain, &candidate) <= tol {
                return Ok(Stationary {
                    occupancy: candidate,
                    recurrent,
                    iterations: it + 1,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        what: "stationary distribution",
        cap,
    })
}

/// Zeros transient entries and renormalizes.
fn project(mu: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut out: Vec<f64> = mu
        .iter()
        .zip(mask)
        .map(|(&m, &keep)| if keep { m } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    }
    out
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * l1(a, b)
}

/// Worst-case total-variation distance to `mu` after `t` steps, over starting
/// pairs in `mask`, for `t = 0..=horizon`.
pub fn tv_profile(chain: &StateActionChain, mu: &[f64], mask: &[bool], horizon: usize) -> Vec<f64> {
    let starts: Vec<usize> = (0..chain.n).filter(|&i| mask[i]).collect();
    let mut dists: Vec<Vec<f64>> = starts
        .iter()
        .map(|&i| {
            let mut d = vec![0.0; chain.n];
            d[i] = 1.0;
            d
        })
        .collect();
    let worst = |dists: &[Vec<f64>]| {
        dists
            .iter()
            .map(|d| total_variation(d, mu))
            .fold(0.0, f64::max)
    };
    let mut out = vec![worst(&dists)];
    let mut buf = vec![0.0; chain.n];
    for _ in 0..horizon {
        for d in dists.iter_mut() {
            chain.step_into(d, &mut buf);
            std::mem::swap(d, &mut buf);
        }
        out.push(worst(&dists));
    }
    out
}

/// Least `t >= 1` such that every start in the recurrent class is within total
/// variation 1/4 of `stationary.occupancy` after `t` steps.
pub fn mixing_time(chain: &StateActionChain, stationary: &Stationary, cap: usize) -> Result<usize> {
    let mu = &stationary.occupancy;
    let starts: Vec<usize> = (0..chain.n).filter(|&i| stationary.recurrent[i]).collect();
    let mut dists: Vec<Vec<f64>> = starts
        .iter()
        .map(|&i| {
            let mut d = vec![0.0; chain.n];
            d[i] = 1.0;
            d
        })
        .collect();
    let mut buf = vec![0.0; chain.n];
    for t in 1..=cap {
        let mut worst: f64 = 0.0;
        for d in dists.iter_mut() {
            chain.step_into(d, &mut buf);
            std::mem::swap(d, &mut buf);
            worst = worst.max(total_variation(d, mu));
        }
        if worst <= MIXING_THRESHOLD {
            return Ok(t);
        }
    }
    Err(Error::NonConvergence {
        what: "mixing time",
        cap,
    })
}

/// Coverage and heterogeneity statistics across agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Minimum stationary occupancy over all agents and pairs.
    pub mu_min: f64,
    /// Minimum over pairs of the agent-averaged occupancy.
    pub mu_avg: f64,
    /// Heterogeneity ratio; `None` when some pair has zero average occupancy.
    pub c_het: Option<f64>,
    pub t_mix_max: usize,
    pub per_agent_mu_min: Vec<f64>,
    pub t_mix_per_agent: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub occupancy: Vec<Vec<f64>>,
}

impl CoverageStats {
    pub fn n_agents(&self) -> usize {
        self.t_mix_per_agent.len()
    }

    /// Stats carrying only the scalar summaries (for schedule requests).
    pub fn from_summary(mu_min: f64, mu_avg: f64, c_het: Option<f64>, t_mix_max: usize) -> Self {
        CoverageStats {
            mu_min,
            mu_avg,
            c_het,
            t_mix_max,
            per_agent_mu_min: Vec::new(),
            t_mix_per_agent: Vec::new(),
            occupancy: Vec::new(),
        }
    }
}

/// Mean of `xs` by compensated summation, clamped to `[min xs, max xs]`.
fn bounded_mean(xs: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut sum, mut comp, mut lo, mut hi, mut n) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
        lo = lo.min(x);
        hi = hi.max(x);
        n += 1;
    }
    let mean = ((sum + comp) / n as f64).clamp(lo, hi);
    (mean, lo, hi)
}

/// Aggregates per-agent occupancies and mixing times.
pub fn coverage_stats(occupancies: &[Vec<f64>], t_mixes: &[usize]) -> Result<CoverageStats> {
    if occupancies.is_empty() {
        return Err(Error::Invalid("coverage statistics need at least one agent".into()));
    }
    if t_mixes.len() != occupancies.len() {
        return Err(Error::Invalid(format!(
            "{} occupancy vectors but {} mixing times",
            occupancies.len(),
            t_mixes.len()
        )));
    }
    let n = occupancies[0].len();
    if n == 0 || occupancies.iter().any(|o| o.len() != n) {
        return Err(Error::Invalid("occupancy vectors must be non-empty and of equal length".into()));
    }
    let per_agent_mu_min: Vec<f64> = occupancies
        .iter()
        .map(|o| o.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mu_min = per_agent_mu_min.iter().copied().fold(f64::INFINITY, f64::min);

    let mut mu_avg = f64::INFINITY;
    let mut c_het: Option<f64> = Some(f64::NEG_INFINITY);
    for i in 0..n {
        let (avg, _, hi) = bounded_mean(occupancies.iter().map(|o| o[i]));
        mu_avg = mu_avg.min(avg);
        if avg > 0.0 {
            c_het = c_het.map(|c| c.max(hi / avg));
        } else {
            c_het = None;
        }
    }
    Ok(CoverageStats {
        mu_min,
        mu_avg,
        c_het,
        t_mix_max: t_mixes.iter().copied().max().unwrap_or(0),
        per_agent_mu_min,
        t_mix_per_agent: t_mixes.to_vec(),
        occupancy: occupancies.to_vec(),
    })
}

/// Full per-agent analysis: stationary occupancy from the start state `s0`,
/// then mixing time on the recurrent class, then the cross-agent statistics.
pub fn analyze_agents(
    mdp: &TabularMdp,
    policies: &[BehaviorPolicy],
    s0: &[usize],
    mixing_cap: usize,
) -> Result<CoverageStats> {
    if policies.len() != s0.len() {
        return Err(Error::Invalid("one start state per agent required".into()));
    }
    let mut occupancies = Vec::with_capacity(policies.len());
    let mut t_mixes = Vec::with_capacity(policies.len());
    for (policy, &s) in policies.iter().zip(s0) {
        if s >= mdp.n_states() {
            return Err(Error::Invalid(format!("start state {s} out of range")));
        }
        let chain = induced_chain(mdp, policy)?;
        let stat = stationary_distribution(
            &chain,
            &policy.start_distribution(s),
            DEFAULT_STATIONARY_TOL,
            DEFAULT_STATIONARY_CAP,
        )?;
        t_mixes.push(mixing_time(&chain, &stat, mixing_cap)?);
        occupancies.push(stat.occupancy);
    }
    coverage_stats(&occupancies, &t_mixes)
}

/// State marginal `sum_a mu(s, a)` of a state-action occupancy.
pub fn state_marginal(occupancy: &[f64], n_actions: usize) -> Vec<f64> {
    occupancy.chunks(n_actions).map(|c| c.iter().sum()).collect()
}
