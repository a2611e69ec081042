//! Seeded random streams and the two sampling protocols.
//!
//! Every stream is a ChaCha20 keystream keyed by the 64-bit seed (little-endian in
//! the first eight key bytes, remaining bytes zero) with stream id
//! `(run_id << 32) | agent_id`. A uniform variate is `(next_u64 >> 11) * 2^-53`.
//! Categorical draws use one variate each via inverse-CDF over the probability row
//! in index order. These rules fix every draw sequence across platforms.
//!
//! Variate consumption is part of the contract: a generative draw consumes one
//! variate per `(s, a)` in row-major order; a Markov step consumes exactly two
//! (action, then next state), even when either distribution is degenerate.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::chains::BehaviorPolicy;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Identifier recorded in every output file.
pub const GENERATOR_ID: &str = "chacha20/rand_chacha-0.3;stream=(run<<32)|agent;u01=(u64>>11)*2^-53";

/// Reserved agent ids for non-agent randomness within a run.
pub const STREAM_MDP: u32 = u32::MAX;
pub const STREAM_Q0: u32 = u32::MAX - 1;
pub const STREAM_INIT: u32 = u32::MAX - 2;

/// A deterministic random stream owned by one `(run, agent)` slot.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    run_id: u32,
    agent_id: u32,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, run_id: u32, agent_id: u32) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(((run_id as u64) << 32) | agent_id as u64);
        RngStream {
            seed,
            run_id,
            agent_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn run_id(&self) -> u32 {
        self.run_id
    }

    pub fn agent_id(&self) -> u32 {
        self.agent_id
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverse-CDF categorical draw over `probs` using one variate.
    #[inline]
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        categorical_index(probs, u)
    }
}

/// First index whose cumulative mass exceeds `u`. If rounding leaves `u` above
/// the total, the last index with positive mass is returned.
pub fn categorical_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// One stream per agent for run `run_id`.
pub fn agent_streams(seed: u64, run_id: u32, n_agents: usize) -> Vec<RngStream> {
    (0..n_agents as u32)
        .map(|k| RngStream::new(seed, run_id, k))
        .collect()
}

/// One sampled transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Independent next-state draw for every `(s, a)`, row-major.
pub fn generative_draw(mdp: &TabularMdp, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(mdp.n_pairs());
    generative_draw_into(mdp, rng, &mut out);
    out
}

pub(crate) fn generative_draw_into(mdp: &TabularMdp, rng: &mut RngStream, out: &mut Vec<usize>) {
    out.clear();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            out.push(rng.categorical(mdp.transition_row(s, a)));
        }
    }
}

/// `a ~ pi(.|s)`, then `s' ~ P(.|s,a)`.
pub fn markov_step(
    mdp: &TabularMdp,
    policy: &BehaviorPolicy,
    s: usize,
    rng: &mut RngStream,
) -> Transition {
    let a = rng.categorical(policy.row(s));
    let s_next = rng.categorical(mdp.transition_row(s, a));
    Transition {
        s,
        a,
        r: mdp.reward(s, a),
        s_next,
    }
}

/// Law of the initial state `s_0^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    Fixed { state: usize },
    Uniform,
    /// Draw from the state marginal of each agent's stationary occupancy.
    Stationary,
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::Fixed { state: 0 }
    }
}

/// One initial state per agent. `stationary_marginals[k]` is agent `k`'s state
/// marginal and is required only in [`InitMode::Stationary`].
pub fn draw_initial_states(
    n_agents: usize,
    n_states: usize,
    mode: InitMode,
    stationary_marginals: Option<&[Vec<f64>]>,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    match mode {
        InitMode::Fixed { state } => {
            if state >= n_states {
                return Err(Error::Invalid(format!("initial state {state} out of range")));
            }
            Ok(vec![state; n_agents])
        }
        InitMode::Uniform => {
            let probs = vec![1.0 / n_states as f64; n_states];
            Ok((0..n_agents).map(|_| rng.categorical(&probs)).collect())
        }
        InitMode::Stationary => {
            let marginals = stationary_marginals.ok_or(Error::MissingStationary)?;
            if marginals.len() != n_agents {
                return Err(Error::Invalid(format!(
                    "{} stationary marginals for {n_agents} agents",
                    marginals.len()
                )));
            }
            Ok(marginals.iter().map(|m| rng.categorical(m)).collect())
        }
    }
}
