//! Tabular MDPs, Q-tables, the Bellman optimality operator and value iteration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default stopping tolerance for [`optimal_q`].
pub const DEFAULT_VI_TOL: f64 = 1e-10;

/// A dense `n_states x n_actions` table of reals, stored row-major by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Invalid(format!(
                "Q-table of shape ({n_states},{n_actions}) needs {} values, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite Q entry at ({},{})",
                i / n_actions,
                i % n_actions
            )));
        }
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Flat row-major view; index `s * n_actions + a`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `max_a q(s, a)`.
    #[inline]
    pub fn max_row(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy value `V(s) = max_a q(s, a)` for every state.
    pub fn greedy_value(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| self.max_row(s)).collect()
    }

    /// Greedy action per state. Ties go to the lowest action index.
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for (a, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_shape(&self, other: &QTable) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// `||self - other||_inf`.
    pub fn linf_distance(&self, other: &QTable) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }
}

/// Greedy value vector of `q`.
pub fn greedy_value(q: &QTable) -> Vec<f64> {
    q.greedy_value()
}

/// `||q - q_star||_inf`, scaled by `1 - gamma` when `normalized` is set.
pub fn linf_error(q: &QTable, q_star: &QTable, gamma: f64, normalized: bool) -> Result<f64> {
    let err = q.linf_distance(q_star)?;
    Ok(if normalized { (1.0 - gamma) * err } else { err })
}

/// Infinite-horizon discounted MDP with deterministic rewards in `[0, 1]`.
///
/// Rewards are stored row-major over `(s, a)`; the kernel is stored as one
/// probability row over next states per `(s, a)`, in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: Vec<f64>,
    transition: Vec<f64>,
}

/// On-disk layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        let pairs = f.n_states * f.n_actions;
        if f.transition.len() != pairs {
            return Err(Error::Invalid(format!(
                "transition must have {pairs} rows (one per (s,a)), got {}",
                f.transition.len()
            )));
        }
        for (i, row) in f.transition.iter().enumerate() {
            if row.len() != f.n_states {
                return Err(Error::Invalid(format!(
                    "transition row {i} at ({},{}) has length {}, expected {}",
                    i / f.n_actions.max(1),
                    i % f.n_actions.max(1),
                    row.len(),
                    f.n_states
                )));
            }
        }
        let transition = f.transition.into_iter().flatten().collect();
        TabularMdp::new(f.n_states, f.n_actions, f.gamma, f.reward, transition)
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        let transition = m
            .transition
            .chunks(m.n_states)
            .map(|c| c.to_vec())
            .collect();
        MdpFile {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            reward: m.reward,
            transition,
        }
    }
}

/// One violated MDP invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace,
    Shape(String),
    Gamma(f64),
    Reward { s: usize, a: usize, value: f64 },
    NegativeProbability { s: usize, a: usize, next: usize, value: f64 },
    RowSum { s: usize, a: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace => write!(f, "state and action spaces must be non-empty"),
            Violation::Shape(msg) => write!(f, "{msg}"),
            Violation::Gamma(g) => write!(f, "gamma {g} not in [0,1)"),
            Violation::Reward { s, a, value } => {
                write!(f, "reward {value} out of [0,1] at ({s},{a})")
            }
            Violation::NegativeProbability { s, a, next, value } => {
                write!(f, "negative probability {value} to state {next} at ({s},{a})")
            }
            Violation::RowSum { s, a, sum } => write!(f, "row sum {sum} at ({s},{a})"),
        }
    }
}

/// Result of [`validate_mdp`]: empty means the MDP is well-formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn check_parts(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: &[f64],
    transition: &[f64],
) -> ValidationReport {
    let mut violations = Vec::new();
    if n_states == 0 || n_actions == 0 {
        violations.push(Violation::EmptySpace);
        return ValidationReport { violations };
    }
    let pairs = n_states * n_actions;
    if reward.len() != pairs {
        violations.push(Violation::Shape(format!(
            "reward has {} entries, expected {pairs}",
            reward.len()
        )));
    }
    if transition.len() != pairs * n_states {
        violations.push(Violation::Shape(format!(
            "transition has {} entries, expected {}",
            transition.len(),
            pairs * n_states
        )));
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }
    if !(0.0..1.0).contains(&gamma) {
        violations.push(Violation::Gamma(gamma));
    }
    for (i, &r) in reward.iter().enumerate() {
        if !(0.0..=1.0).contains(&r) {
            violations.push(Violation::Reward {
                s: i / n_actions,
                a: i % n_actions,
                value: r,
            });
        }
    }
    for (i, row) in transition.chunks(n_states).enumerate() {
        let (s, a) = (i / n_actions, i % n_actions);
        for (next, &p) in row.iter().enumerate() {
            if !(p >= 0.0) {
                violations.push(Violation::NegativeProbability {
                    s,
                    a,
                    next,
                    value: p,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
            violations.push(Violation::RowSum { s, a, sum });
        }
    }
    ValidationReport { violations }
}

/// Checks every MDP invariant and reports each violation with its location.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    check_parts(
        mdp.n_states,
        mdp.n_actions,
        mdp.gamma,
        &mdp.reward,
        &mdp.transition,
    )
}

impl TabularMdp {
    /// Builds and validates an MDP. `transition` holds `n_states * n_actions` rows of
    /// length `n_states`, ordered row-major over `(s, a)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        let report = check_parts(n_states, n_actions, gamma, &reward, &transition);
        if !report.is_ok() {
            return Err(Error::Invalid(report.to_string()));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            gamma,
            reward,
            transition,
        })
    }

    /// Builds an MDP without validating it. Intended for constructing
    /// deliberately malformed instances to feed to [`validate_mdp`].
    pub fn new_unchecked(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Self {
        TabularMdp {
            n_states,
            n_actions,
            gamma,
            reward,
            transition,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialization cannot fail")
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `1 / (1 - gamma)`, the range bound of every value and Q-function.
    #[inline]
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `P(. | s, a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    fn check_q(&self, q: &QTable) -> Result<()> {
        if q.shape() != (self.n_states, self.n_actions) {
            return Err(Error::ShapeMismatch {
                expected: (self.n_states, self.n_actions),
                got: q.shape(),
            });
        }
        Ok(())
    }
}

fn bellman_into(mdp: &TabularMdp, v: &[f64], out: &mut QTable) {
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let ev: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v)
                .map(|(p, v)| p * v)
                .sum();
            out.set(s, a, mdp.reward(s, a) + mdp.gamma * ev);
        }
    }
}

/// `T(q)(s,a) = r(s,a) + gamma * E_{s' ~ P(.|s,a)} max_a' q(s',a')`.
pub fn bellman_operator(mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
    mdp.check_q(q)?;
    let v = q.greedy_value();
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    bellman_into(mdp, &v, &mut out);
    Ok(out)
}

/// Iteration cap used by [`optimal_q`]: the contraction bound plus slack.
pub fn value_iteration_cap(gamma: f64, tol: f64) -> usize {
    const SLACK: usize = 1000;
    if gamma <= 0.0 {
        return SLACK;
    }
    let k = ((tol * (1.0 - gamma)).ln() / gamma.ln()).ceil();
    if k.is_finite() && k > 0.0 {
        k as usize + SLACK
    } else {
        SLACK
    }
}

/// Value iteration from `Q = 0` until the Bellman residual is at most `tol`.
///
/// The returned table `Q` satisfies `||T(Q) - Q||_inf <= tol`.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let cap = value_iteration_cap(mdp.gamma, tol);
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    let mut next = q.clone();
    for _ in 0..=cap {
        bellman_into(mdp, &q.greedy_value(), &mut next);
        let residual = q.linf_distance(&next)?;
        if residual <= tol {
            return Ok(q);
        }
        std::mem::swap(&mut q, &mut next);
    }
    Err(Error::NonConvergence {
        what: "value iteration",
        cap,
    })
}

/// `||T(q) - q||_inf`.
pub fn bellman_residual(mdp: &TabularMdp, q: &QTable) -> Result<f64> {
    bellman_operator(mdp, q)?.linf_distance(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two states, `m` actions, stay probability 0.5 everywhere, reward 1 in state 1.
    fn symmetric(m: usize, gamma: f64) -> TabularMdp {
        let mut reward = Vec::new();
        let mut transition = Vec::new();
        for s in 0..2 {
            for _ in 0..m {
                reward.push(s as f64);
                transition.extend([0.5, 0.5]);
            }
        }
        TabularMdp::new(2, m, gamma, reward, transition).unwrap()
    }

    #[test]
    fn validation_examples() {
        let ok = symmetric(1, 0.9);
        assert!(validate_mdp(&ok).is_ok());

        let bad_row = TabularMdp::new_unchecked(
            2,
            1,
            0.9,
            vec![0.0, 1.0],
            vec![0.5, 0.6, 0.5, 0.5],
        );
        let report = validate_mdp(&bad_row);
        assert_eq!(report.violations.len(), 1);
        assert!(report.to_string().contains("row sum 1.1 at (0,0)"), "{report}");

        let bad_reward = TabularMdp::new_unchecked(
            2,
            1,
            0.9,
            vec![1.5, 1.0],
            vec![0.5, 0.5, 0.5, 0.5],
        );
        assert!(validate_mdp(&bad_reward)
            .to_string()
            .contains("reward 1.5 out of [0,1]"));

        let bad_gamma =
            TabularMdp::new_unchecked(1, 1, 1.0, vec![0.0], vec![1.0]);
        assert_eq!(validate_mdp(&bad_gamma).violations, vec![Violation::Gamma(1.0)]);
        assert!(TabularMdp::new(1, 1, 1.0, vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn bellman_examples() {
        let mdp = symmetric(1, 0.9);
        let out = bellman_operator(&mdp, &QTable::zeros(2, 1)).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 1.0]);

        let mdp0 = symmetric(3, 0.0);
        let q = QTable::from_vec(2, 3, vec![3.0, 1.0, 2.0, 7.0, 0.5, 9.0]).unwrap();
        let out = bellman_operator(&mdp0, &q).unwrap();
        assert_eq!(out.as_slice(), mdp0.rewards());

        let wrong = QTable::zeros(3, 1);
        assert!(matches!(
            bellman_operator(&mdp, &wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn optimal_q_symmetric_closed_form() {
        // V0 = 0.45 (V0 + V1), V1 = 1 + 0.45 (V0 + V1)  =>  V0 + V1 = 10.
        let mdp = symmetric(4, 0.9);
        let q = optimal_q(&mdp, DEFAULT_VI_TOL).unwrap();
        for a in 0..4 {
            assert!((q.get(0, a) - 4.5).abs() < 1e-9);
            assert!((q.get(1, a) - 5.5).abs() < 1e-9);
        }
        assert!(bellman_residual(&mdp, &q).unwrap() <= DEFAULT_VI_TOL);
        let v = greedy_value(&q);
        assert!((v[0] - 4.5).abs() < 1e-9 && (v[1] - 5.5).abs() < 1e-9);
        let fixed = bellman_operator(&mdp, &q).unwrap();
        assert!(fixed.linf_distance(&q).unwrap() <= 1e-10);
    }

    #[test]
    fn optimal_q_gamma_zero_is_reward() {
        let mdp = symmetric(2, 0.0);
        let q = optimal_q(&mdp, 1e-12).unwrap();
        assert_eq!(q.as_slice(), mdp.rewards());
    }

    #[test]
    fn optimal_q_rejects_bad_tolerance() {
        let mdp = symmetric(1, 0.9);
        assert!(optimal_q(&mdp, 0.0).is_err());
        // Below float resolution: either the exact fixed point or non-convergence.
        match optimal_q(&mdp, 1e-300) {
            Ok(q) => assert_eq!(bellman_residual(&mdp, &q).unwrap(), 0.0),
            Err(e) => assert!(matches!(e, Error::NonConvergence { .. })),
        }
    }

    #[test]
    fn value_iteration_contracts_geometrically() {
        let mdp = symmetric(2, 0.9);
        let q_star = optimal_q(&mdp, 1e-13).unwrap();
        let mut q = QTable::filled(2, 2, 10.0);
        let e0 = q.linf_distance(&q_star).unwrap();
        for k in 1..60 {
            q = bellman_operator(&mdp, &q).unwrap();
            let ek = q.linf_distance(&q_star).unwrap();
            assert!(ek <= 0.9f64.powi(k) * e0 + 1e-9);
        }
    }

    #[test]
    fn greedy_value_and_policy() {
        let q = QTable::from_vec(2, 3, vec![1.0, 3.0, 2.0, 4.0, 4.0, 1.0]).unwrap();
        assert_eq!(greedy_value(&q), vec![3.0, 4.0]);
        assert_eq!(q.greedy_policy(), vec![1, 0]);
        assert_eq!(greedy_value(&QTable::filled(3, 2, 0.7)), vec![0.7; 3]);
    }

    #[test]
    fn linf_error_examples() {
        let a = QTable::filled(2, 2, 1.0);
        assert_eq!(linf_error(&a, &a, 0.9, true).unwrap(), 0.0);

        let zero = QTable::zeros(2, 2);
        let top = QTable::filled(2, 2, 1.0 / (1.0 - 0.9));
        assert!((linf_error(&zero, &top, 0.9, true).unwrap() - 1.0).abs() < 1e-15);

        let mut b = a.clone();
        b.set(1, 0, 1.3);
        assert!((linf_error(&b, &a, 0.9, false).unwrap() - 0.3).abs() < 1e-15);
        assert!(linf_error(&a, &QTable::zeros(1, 2), 0.9, false).is_err());
    }

    #[test]
    fn json_round_trip_and_row_errors() {
        let mdp = symmetric(2, 0.9);
        let back = TabularMdp::from_json(&mdp.to_json()).unwrap();
        assert_eq!(back, mdp);

        let bad = r#"{"n_states":2,"n_actions":1,"gamma":0.9,"reward":[0,1],
                      "transition":[[0.5,0.6],[0.5,0.5]]}"#;
        let err = TabularMdp::from_json(bad).unwrap_err().to_string();
        assert!(err.contains("row sum 1.1 at (0,0)"), "{err}");

        let short = r#"{"n_states":2,"n_actions":1,"gamma":0.9,"reward":[0,1],
                        "transition":[[1.0],[0.5,0.5]]}"#;
        let err = TabularMdp::from_json(short).unwrap_err().to_string();
        assert!(err.contains("transition row 0"), "{err}");
    }
}
