//! Exact dynamic programming on a known [`TabularMdp`].

use crate::mdp::{max_abs_diff, ActionId, ActionValueTable, StateId, TabularMdp, ValueTable};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("horizon must be at least 1")]
    Horizon,
    #[error("value iteration hit the cap of {0} sweeps")]
    IterationCap(usize),
    #[error("initial values have length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Result of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueTable,
    pub iterations: usize,
    /// `||V_{t+1} - V_t||_inf` for every sweep.
    pub residuals: Vec<f64>,
}

/// One synchronous Bellman optimality backup.
pub fn bellman_backup(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|x| {
            (0..mdp.n_actions())
                .map(|a| mdp.backup(StateId(x), ActionId(a), v))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Value iteration from `V_0 = 0`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<Solution, SolverError> {
    value_iteration_from(mdp, &ValueTable::zeros(mdp.n_states()), tol)
}

/// Jacobi-style value iteration, stopping once a sweep changes no entry by
/// more than `tol`. The result is within `tol * gamma / (1 - gamma)` of `V*`.
pub fn value_iteration_from(mdp: &TabularMdp, init: &ValueTable, tol: f64) -> Result<Solution, SolverError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(SolverError::Tolerance(tol));
    }
    if init.len() != mdp.n_states() {
        return Err(SolverError::Dimension { expected: mdp.n_states(), found: init.len() });
    }
    let mut v = init.as_slice().to_vec();
    let mut residuals = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let next = bellman_backup(mdp, &v);
        let residual = max_abs_diff(&next, &v);
        residuals.push(residual);
        v = next;
        if residual <= tol {
            return Ok(Solution { values: ValueTable::from_vec(v), iterations: sweep, residuals });
        }
    }
    Err(SolverError::IterationCap(MAX_SWEEPS))
}

/// `Q*(x, a) = R(x, a) + gamma * sum_y P(x, a, y) V*(y)`.
pub fn optimal_q(mdp: &TabularMdp, v_star: &ValueTable) -> ActionValueTable {
    let mut q = ActionValueTable::zeros(mdp.n_states(), mdp.n_actions());
    for x in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let (x, a) = (StateId(x), ActionId(a));
            q.set(x, a, mdp.backup(x, a, v_star.as_slice()));
        }
    }
    q
}

/// Exact `horizon`-step backup of the zero function.
pub fn finite_horizon_values(mdp: &TabularMdp, horizon: usize) -> Result<ValueTable, SolverError> {
    if horizon == 0 {
        return Err(SolverError::Horizon);
    }
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..horizon {
        v = bellman_backup(mdp, &v);
    }
    Ok(ValueTable::from_vec(v))
}

/// Solves the MDP to the default tolerance and returns `(V*, Q*)`.
pub fn solve(mdp: &TabularMdp) -> Result<(ValueTable, ActionValueTable), SolverError> {
    let sol = value_iteration(mdp, DEFAULT_TOLERANCE)?;
    let q = optimal_q(mdp, &sol.values);
    Ok((sol.values, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate_policy, greedy_policy, Outcome};

    fn chain() -> TabularMdp {
        let rows = vec![vec![Outcome::new(1, 1.0, 0.0)], vec![Outcome::new(1, 1.0, 1.0)]];
        TabularMdp::new(2, 1, rows, &[], 0.9).unwrap()
    }

    #[test]
    fn single_state_value() {
        let mdp = TabularMdp::new(1, 1, vec![vec![Outcome::new(0, 1.0, 1.0)]], &[], 0.5).unwrap();
        let sol = value_iteration(&mdp, 1e-10).unwrap();
        assert!((sol.values.get(StateId(0)) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn residuals_contract() {
        let sol = value_iteration(&chain(), 1e-10).unwrap();
        for w in sol.residuals.windows(2) {
            assert!(w[1] <= 0.9 * w[0] + 1e-12);
        }
    }

    #[test]
    fn chain_q_values() {
        let mdp = chain();
        let sol = value_iteration(&mdp, 1e-12).unwrap();
        let q = optimal_q(&mdp, &sol.values);
        assert!((q.get(StateId(0), ActionId(0)) - 9.0).abs() < 1e-9);
        assert!((q.get(StateId(1), ActionId(0)) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn transition_into_terminal() {
        let rows = vec![
            vec![Outcome::new(1, 1.0, 10.0)],
            vec![Outcome::new(0, 1.0, -1.0)],
            vec![Outcome::new(1, 1.0, 0.0)],
            vec![Outcome::new(1, 1.0, 0.0)],
        ];
        let mdp = TabularMdp::new(2, 2, rows, &[StateId(1)], 0.9).unwrap();
        let (v, q) = solve(&mdp).unwrap();
        assert!((q.get(StateId(0), ActionId(0)) - 10.0).abs() < 1e-7);
        for x in 0..2 {
            assert!((q.max(StateId(x)) - v.get(StateId(x))).abs() < 1e-7);
        }
    }

    #[test]
    fn horizon_one_is_best_immediate_reward() {
        let rows = vec![
            vec![Outcome::new(0, 0.5, 2.0), Outcome::new(1, 0.5, 0.0)],
            vec![Outcome::new(1, 1.0, 3.0)],
            vec![Outcome::new(0, 1.0, -1.0)],
            vec![Outcome::new(1, 1.0, -2.0)],
        ];
        let mdp = TabularMdp::new(2, 2, rows, &[], 0.9).unwrap();
        let v = finite_horizon_values(&mdp, 1).unwrap();
        assert_eq!(v.as_slice(), &[3.0, -1.0]);
        assert_eq!(finite_horizon_values(&mdp, 0), Err(SolverError::Horizon));
    }

    #[test]
    fn long_horizon_on_single_state() {
        let mdp = TabularMdp::new(1, 1, vec![vec![Outcome::new(0, 1.0, 2.0)]], &[], 0.5).unwrap();
        let v = finite_horizon_values(&mdp, 200).unwrap();
        assert!((v.get(StateId(0)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert_eq!(value_iteration(&chain(), 0.0).unwrap_err(), SolverError::Tolerance(0.0));
    }

    #[test]
    fn greedy_policy_is_near_optimal() {
        let rows = vec![
            vec![Outcome::new(1, 0.8, 0.0), Outcome::new(0, 0.2, 0.0)],
            vec![Outcome::new(0, 1.0, 0.1)],
            vec![Outcome::new(2, 1.0, 1.0)],
            vec![Outcome::new(0, 1.0, 0.0)],
            vec![Outcome::new(2, 1.0, 0.0)],
            vec![Outcome::new(1, 1.0, 0.5)],
        ];
        let mdp = TabularMdp::new(3, 2, rows, &[], 0.95).unwrap();
        let tol = 1e-8;
        let (v, q) = solve(&mdp).unwrap();
        let v_pi = evaluate_policy(&mdp, &greedy_policy(&q), 1e-12).unwrap();
        assert!(v_pi.max_abs_diff(&v) <= tol * 2.0 * 0.95 / 0.05 + 1e-9);
    }
}
