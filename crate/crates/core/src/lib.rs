//! Federated Q-learning for infinite-horizon tabular MDPs.
//!
//! The crate covers the full pipeline behind a federated tabular Q-learning study:
//!
//! * [`mdp`]: MDP representation, the Bellman operator and an exact optimal-Q oracle.
//! * [`chains`]: analysis of the state-action Markov chain induced by a behavior policy
//!   (stationary occupancy, mixing time, coverage and heterogeneity statistics).
//! * [`samplers`]: seeded, per-agent random streams for generative-model and Markovian sampling.
//! * [`federated`]: the synchronous and asynchronous federated loops with equal or
//!   importance-weighted periodic averaging.
//! * [`schedules`]: hyperparameter schedules prescribed by the finite-time guarantees.
//! * [`experiments`]: the synthetic two-state benchmark and its three sweep protocols.
//!
//! ```
//! use fedq::mdp::{optimal_q, TabularMdp};
//!
//! let mdp = TabularMdp::new(
//!     1,
//!     1,
//!     0.5,
//!     vec![1.0],
//!     vec![1.0],
//! ).unwrap();
//! let q = optimal_q(&mdp, 1e-12).unwrap();
//! assert!((q.get(0, 0) - 2.0).abs() < 1e-10);
//! ```

pub mod chains;
mod error;
pub mod experiments;
pub mod federated;
pub mod mdp;
pub mod samplers;
pub mod schedules;

pub use chains::{BehaviorPolicy, CoverageStats, StateActionChain};
pub use error::{Error, Result};
pub use federated::{AggregationScheme, AgentState, RunTrace};
pub use mdp::{QTable, TabularMdp};
pub use samplers::RngStream;

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
