//! Finite MDPs: states, actions, transition kernels, policies and value tables.
//!
//! Rewards are keyed by `(state, action, successor)`. The expected reward
//! `R(x, a)` is recovered as the kernel-weighted mean over successors.

use rand::Rng;
use std::fmt;
use thiserror::Error;

/// Tolerance on probability row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

const MAX_EVAL_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("state index {index} out of range (n_states = {n_states})")]
    InvalidState { index: usize, n_states: usize },
    #[error("action index {index} out of range (n_actions = {n_actions})")]
    InvalidAction { index: usize, n_actions: usize },
    #[error("row ({state}, {action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("row ({state}, {action}) has an invalid probability {prob}")]
    BadProbability { state: usize, action: usize, prob: f64 },
    #[error("row ({state}, {action}) has a non-finite reward")]
    BadReward { state: usize, action: usize },
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("expected {expected} kernel rows, got {found}")]
    RowCount { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("policy evaluation did not converge within {0} sweeps")]
    NotConverged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ActionId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One successor of a `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: StateId,
    pub prob: f64,
    pub reward: f64,
}

impl Outcome {
    pub fn new(next: usize, prob: f64, reward: f64) -> Self {
        Outcome { next: StateId(next), prob, reward }
    }
}

/// An experience tuple `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateId,
    pub done: bool,
}

/// A finite MDP with a sparse kernel.
///
/// Terminal states are absorbing: their rows are replaced by a zero-reward
/// self-loop at construction, whatever the caller supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    rows: Vec<Vec<Outcome>>,
    terminal: Vec<bool>,
    discount: f64,
}

impl TabularMdp {
    /// `rows` is indexed by `state * n_actions + action`. Outcomes with zero
    /// probability are dropped and duplicate successors are merged (their
    /// rewards probability-weighted).
    pub fn new(
        n_states: usize,
        n_actions: usize,
        rows: Vec<Vec<Outcome>>,
        terminals: &[StateId],
        discount: f64,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Argument("an MDP needs at least one state and one action".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::Discount(discount));
        }
        if rows.len() != n_states * n_actions {
            return Err(MdpError::RowCount { expected: n_states * n_actions, found: rows.len() });
        }
        let mut terminal = vec![false; n_states];
        for t in terminals {
            if t.0 >= n_states {
                return Err(MdpError::InvalidState { index: t.0, n_states });
            }
            terminal[t.0] = true;
        }
        let mut clean = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let (state, action) = (i / n_actions, i % n_actions);
            if terminal[state] {
                clean.push(vec![Outcome::new(state, 1.0, 0.0)]);
                continue;
            }
            clean.push(normalize_row(state, action, n_states, row)?);
        }
        Ok(TabularMdp { n_states, n_actions, rows: clean, terminal, discount })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Copy of this MDP with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self, MdpError> {
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::Discount(discount));
        }
        Ok(TabularMdp { discount, ..self.clone() })
    }

    pub fn is_terminal(&self, x: StateId) -> bool {
        self.terminal.get(x.0).copied().unwrap_or(false)
    }

    pub fn terminal_states(&self) -> Vec<StateId> {
        (0..self.n_states).filter(|&i| self.terminal[i]).map(StateId).collect()
    }

    pub fn check_state(&self, x: StateId) -> Result<(), MdpError> {
        if x.0 < self.n_states {
            Ok(())
        } else {
            Err(MdpError::InvalidState { index: x.0, n_states: self.n_states })
        }
    }

    pub fn check_action(&self, a: ActionId) -> Result<(), MdpError> {
        if a.0 < self.n_actions {
            Ok(())
        } else {
            Err(MdpError::InvalidAction { index: a.0, n_actions: self.n_actions })
        }
    }

    /// Successor distribution of `(x, a)`, sorted by successor index.
    pub fn outcomes(&self, x: StateId, a: ActionId) -> &[Outcome] {
        &self.rows[x.0 * self.n_actions + a.0]
    }

    /// `P(x, a, y)`.
    pub fn prob(&self, x: StateId, a: ActionId, y: StateId) -> f64 {
        self.outcomes(x, a).iter().find(|o| o.next == y).map_or(0.0, |o| o.prob)
    }

    /// `R(x, a) = sum_y P(x, a, y) R(x, a, y)`.
    pub fn expected_reward(&self, x: StateId, a: ActionId) -> f64 {
        self.outcomes(x, a).iter().map(|o| o.prob * o.reward).sum()
    }

    /// Largest `|R(x, a, y)|` over the support of the kernel.
    pub fn max_abs_reward(&self) -> f64 {
        self.rows.iter().flatten().map(|o| o.reward.abs()).fold(0.0, f64::max)
    }

    /// `R(x, a) + discount * sum_y P(x, a, y) v(y)`.
    pub fn backup(&self, x: StateId, a: ActionId, v: &[f64]) -> f64 {
        self.outcomes(x, a)
            .iter()
            .map(|o| o.prob * (o.reward + self.discount * v[o.next.0]))
            .sum()
    }

    /// Draws a successor of `(x, a)`.
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        x: StateId,
        a: ActionId,
        rng: &mut R,
    ) -> Result<Transition, MdpError> {
        self.check_state(x)?;
        self.check_action(a)?;
        let outcome = sample_outcome(self.outcomes(x, a), rng);
        Ok(Transition {
            state: x,
            action: a,
            reward: outcome.reward,
            next_state: outcome.next,
            done: self.is_terminal(outcome.next),
        })
    }
}

fn normalize_row(
    state: usize,
    action: usize,
    n_states: usize,
    mut row: Vec<Outcome>,
) -> Result<Vec<Outcome>, MdpError> {
    let mut sum = 0.0;
    for o in &row {
        if o.next.0 >= n_states {
            return Err(MdpError::InvalidState { index: o.next.0, n_states });
        }
        if !o.prob.is_finite() || o.prob < 0.0 || o.prob > 1.0 + ROW_SUM_TOLERANCE {
            return Err(MdpError::BadProbability { state, action, prob: o.prob });
        }
        if !o.reward.is_finite() {
            return Err(MdpError::BadReward { state, action });
        }
        sum += o.prob;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(MdpError::RowSum { state, action, sum });
    }
    row.retain(|o| o.prob > 0.0);
    row.sort_by_key(|o| o.next);
    let mut merged: Vec<Outcome> = Vec::with_capacity(row.len());
    for o in row {
        match merged.last_mut() {
            Some(last) if last.next == o.next => {
                let p = last.prob + o.prob;
                last.reward = (last.prob * last.reward + o.prob * o.reward) / p;
                last.prob = p;
            }
            _ => merged.push(o),
        }
    }
    Ok(merged)
}

/// Inverse-CDF draw from a sparse distribution. Consumes exactly one `f64`.
pub(crate) fn sample_outcome<'a, R: Rng + ?Sized>(outcomes: &'a [Outcome], rng: &mut R) -> &'a Outcome {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for o in outcomes {
        acc += o.prob;
        if u < acc {
            return o;
        }
    }
    // Rounding can leave acc slightly below 1.
    outcomes.last().expect("kernel rows are never empty")
}

/// Anything an agent can act in.
pub trait Environment {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn step<R: Rng + ?Sized>(&mut self, x: StateId, a: ActionId, rng: &mut R) -> Result<Transition, MdpError>;
}

impl Environment for TabularMdp {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn step<R: Rng + ?Sized>(&mut self, x: StateId, a: ActionId, rng: &mut R) -> Result<Transition, MdpError> {
        self.sample_transition(x, a, rng)
    }
}

impl<E: Environment> Environment for &mut E {
    fn n_states(&self) -> usize {
        (**self).n_states()
    }

    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }

    fn step<R: Rng + ?Sized>(&mut self, x: StateId, a: ActionId, rng: &mut R) -> Result<Transition, MdpError> {
        (**self).step(x, a, rng)
    }
}

/// State values `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(n_states: usize) -> Self {
        ValueTable { values: vec![0.0; n_states] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ValueTable { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, x: StateId) -> f64 {
        self.values[x.0]
    }

    pub fn set(&mut self, x: StateId, v: f64) {
        self.values[x.0] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `max_x |self(x) - other(x)|`.
    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Action values `Q(x, a)`, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValueTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl ActionValueTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        ActionValueTable { n_states, n_actions, values: vec![value; n_states * n_actions] }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self, MdpError> {
        if values.len() != n_states * n_actions {
            return Err(MdpError::Argument(format!(
                "{} values do not fill a {n_states}x{n_actions} table",
                values.len()
            )));
        }
        Ok(ActionValueTable { n_states, n_actions, values })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, x: StateId, a: ActionId) -> f64 {
        self.values[x.0 * self.n_actions + a.0]
    }

    pub fn set(&mut self, x: StateId, a: ActionId, v: f64) {
        self.values[x.0 * self.n_actions + a.0] = v;
    }

    pub fn row(&self, x: StateId) -> &[f64] {
        &self.values[x.0 * self.n_actions..(x.0 + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Greedy action, lowest index on ties.
    pub fn argmax(&self, x: StateId) -> ActionId {
        ActionId(argmax(self.row(x)))
    }

    pub fn max(&self, x: StateId) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `V(x) = max_a Q(x, a)` for every state.
    pub fn state_values(&self) -> ValueTable {
        ValueTable::from_vec((0..self.n_states).map(|x| self.max(StateId(x))).collect())
    }

    /// `max(Q) - min(Q)`.
    pub fn span(&self) -> f64 {
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    pub fn max_abs_diff(&self, other: &ActionValueTable) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A stochastic Markovian policy `pi(a | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_actions == 0 {
            return Err(MdpError::Argument("a policy needs at least one state and one action".into()));
        }
        let mut probs = Vec::with_capacity(rows.len() * n_actions);
        for (x, row) in rows.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(MdpError::Argument(format!("policy row {x} has {} entries", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(MdpError::RowSum { state: x, action: 0, sum });
            }
            probs.extend(row);
        }
        Ok(Policy { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy { n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn deterministic(actions: &[ActionId], n_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, a) in actions.iter().enumerate() {
            probs[x * n_actions + a.0] = 1.0;
        }
        Policy { n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, x: StateId) -> &[f64] {
        &self.probs[x.0 * self.n_actions..(x.0 + 1) * self.n_actions]
    }

    pub fn prob(&self, x: StateId, a: ActionId) -> f64 {
        self.row(x)[a.0]
    }

    /// Most probable action in `x`; for a deterministic policy, its action.
    pub fn mode(&self, x: StateId) -> ActionId {
        ActionId(argmax(self.row(x)))
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: StateId, rng: &mut R) -> ActionId {
        let row = self.row(x);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return ActionId(a);
            }
        }
        ActionId(row.iter().rposition(|p| *p > 0.0).unwrap_or(0))
    }
}

/// Deterministic policy putting all mass on `argmax_a q(x, a)`.
pub fn greedy_policy(q: &ActionValueTable) -> Policy {
    let actions: Vec<ActionId> = (0..q.n_states()).map(|x| q.argmax(StateId(x))).collect();
    Policy::deterministic(&actions, q.n_actions())
}

/// With probability `eps` a uniform action, otherwise the greedy one.
///
/// Always consumes one `f64` draw, plus one integer draw when exploring, so
/// paired runs stay in lockstep regardless of `eps`.
pub fn epsilon_greedy_action<R: Rng + ?Sized>(
    q: &ActionValueTable,
    x: StateId,
    eps: f64,
    rng: &mut R,
) -> Result<ActionId, MdpError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(MdpError::Argument(format!("exploration rate {eps} outside [0, 1]")));
    }
    let u: f64 = rng.gen();
    if u < eps {
        Ok(ActionId(rng.gen_range(0..q.n_actions())))
    } else {
        Ok(q.argmax(x))
    }
}

/// One Bellman backup for `policy`.
pub fn policy_backup(mdp: &TabularMdp, policy: &Policy, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|x| {
            let x = StateId(x);
            policy
                .row(x)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(a, p)| p * mdp.backup(x, ActionId(a), v))
                .sum()
        })
        .collect()
}

/// Iterative policy evaluation until the max-norm residual drops to `tol`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<ValueTable, MdpError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(MdpError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::Argument("policy and MDP dimensions differ".into()));
    }
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..MAX_EVAL_SWEEPS {
        let next = policy_backup(mdp, policy, &v);
        let residual = max_abs_diff(&next, &v);
        v = next;
        if residual <= tol {
            return Ok(ValueTable::from_vec(v));
        }
    }
    Err(MdpError::NotConverged(MAX_EVAL_SWEEPS))
}

/// Discounted return of one episode from `start`, truncated at `horizon`
/// steps or on reaching a terminal state.
pub fn rollout_return<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    start: StateId,
    discount: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<f64, MdpError> {
    if horizon == 0 {
        return Err(MdpError::Argument("horizon must be at least 1".into()));
    }
    mdp.check_state(start)?;
    let mut x = start;
    let mut total = 0.0;
    let mut weight = 1.0;
    for _ in 0..horizon {
        let a = policy.sample(x, rng);
        let t = mdp.sample_transition(x, a, rng)?;
        total += weight * t.reward;
        weight *= discount;
        x = t.next_state;
        if t.done {
            break;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state(reward: f64, discount: f64) -> TabularMdp {
        TabularMdp::new(1, 2, vec![vec![Outcome::new(0, 1.0, reward)]; 2], &[], discount).unwrap()
    }

    fn two_state_chain() -> TabularMdp {
        // x0 -> x1 with reward 0; x1 loops with reward 1.
        let rows = vec![vec![Outcome::new(1, 1.0, 0.0)], vec![Outcome::new(1, 1.0, 1.0)]];
        TabularMdp::new(2, 1, rows, &[], 0.9).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMdp::new(2, 1, vec![vec![Outcome::new(0, 0.5, 0.0)]; 2], &[], 0.9).unwrap_err();
        assert!(matches!(err, MdpError::RowSum { .. }));
        let err = TabularMdp::new(1, 1, vec![vec![Outcome::new(0, 1.0, 0.0)]], &[], 1.0).unwrap_err();
        assert_eq!(err, MdpError::Discount(1.0));
        let err = TabularMdp::new(1, 1, vec![vec![Outcome::new(3, 1.0, 0.0)]], &[], 0.5).unwrap_err();
        assert!(matches!(err, MdpError::InvalidState { index: 3, .. }));
        let err = TabularMdp::new(1, 1, vec![vec![Outcome::new(0, 1.0, f64::NAN)]], &[], 0.5).unwrap_err();
        assert!(matches!(err, MdpError::BadReward { .. }));
    }

    #[test]
    fn terminal_rows_become_absorbing() {
        let rows = vec![vec![Outcome::new(1, 1.0, 5.0)], vec![Outcome::new(0, 1.0, 3.0)]];
        let mdp = TabularMdp::new(2, 1, rows, &[StateId(1)], 0.9).unwrap();
        assert_eq!(mdp.outcomes(StateId(1), ActionId(0)), &[Outcome::new(1, 1.0, 0.0)]);
    }

    #[test]
    fn duplicate_successors_merge() {
        let row = vec![Outcome::new(0, 0.25, 4.0), Outcome::new(0, 0.75, 0.0)];
        let mdp = TabularMdp::new(1, 1, vec![row], &[], 0.5).unwrap();
        assert_eq!(mdp.outcomes(StateId(0), ActionId(0)), &[Outcome::new(0, 1.0, 1.0)]);
    }

    #[test]
    fn deterministic_sampling() {
        let mdp = two_state_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = mdp.sample_transition(StateId(0), ActionId(0), &mut rng).unwrap();
            assert_eq!(t.next_state, StateId(1));
            assert!(!t.done);
        }
    }

    #[test]
    fn sampling_frequency() {
        let rows = vec![vec![Outcome::new(1, 0.7, 0.0), Outcome::new(2, 0.3, 0.0)], vec![], vec![]];
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| if r.is_empty() { vec![Outcome::new(i, 1.0, 0.0)] } else { r })
            .collect();
        let mdp = TabularMdp::new(3, 1, rows, &[], 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| mdp.sample_transition(StateId(0), ActionId(0), &mut rng).unwrap().next_state == StateId(1))
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.7).abs() <= 0.02, "freq = {freq}");
    }

    #[test]
    fn terminal_successor_is_done() {
        let rows = vec![vec![Outcome::new(1, 1.0, 10.0)], vec![Outcome::new(1, 1.0, 0.0)]];
        let mdp = TabularMdp::new(2, 1, rows, &[StateId(1)], 0.9).unwrap();
        let t = mdp.sample_transition(StateId(0), ActionId(0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(t.done);
        assert_eq!(t.reward, 10.0);
    }

    #[test]
    fn sampling_rejects_bad_indices() {
        let mdp = two_state_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mdp.sample_transition(StateId(7), ActionId(0), &mut rng),
            Err(MdpError::InvalidState { index: 7, .. })
        ));
        assert!(matches!(
            mdp.sample_transition(StateId(0), ActionId(4), &mut rng),
            Err(MdpError::InvalidAction { index: 4, .. })
        ));
    }

    #[test]
    fn evaluate_single_state() {
        let mdp = single_state(1.0, 0.5);
        let v = evaluate_policy(&mdp, &Policy::uniform(1, 2), 1e-12).unwrap();
        assert!((v.get(StateId(0)) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn evaluate_two_state_chain() {
        // V(x1) = 1 / (1 - 0.9) = 10, V(x0) = 0.9 * 10 = 9.
        let v = evaluate_policy(&two_state_chain(), &Policy::uniform(2, 1), 1e-12).unwrap();
        assert!((v.get(StateId(1)) - 10.0).abs() < 1e-9);
        assert!((v.get(StateId(0)) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_rejects_nonpositive_tolerance() {
        assert!(evaluate_policy(&two_state_chain(), &Policy::uniform(2, 1), 0.0).is_err());
    }

    #[test]
    fn greedy_examples() {
        let q = ActionValueTable::from_vec(3, 4, vec![1., 3., 2., 0., 5., 5., 1., 1., 2., 2., 2., 2.]).unwrap();
        let pi = greedy_policy(&q);
        assert_eq!(pi.mode(StateId(0)), ActionId(1));
        assert_eq!(pi.mode(StateId(1)), ActionId(0));
        assert_eq!(pi.mode(StateId(2)), ActionId(0));
        assert_eq!(pi.prob(StateId(0), ActionId(1)), 1.0);
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let q = ActionValueTable::from_vec(1, 4, vec![1., 3., 2., 0.]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy_action(&q, StateId(0), 0.0, &mut rng).unwrap(), ActionId(1));
        }
    }

    #[test]
    fn epsilon_out_of_range() {
        let q = ActionValueTable::zeros(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(epsilon_greedy_action(&q, StateId(0), 1.5, &mut rng).is_err());
        assert!(epsilon_greedy_action(&q, StateId(0), -0.1, &mut rng).is_err());
    }

    #[test]
    fn epsilon_one_is_uniform() {
        // Chi-square with 3 degrees of freedom; 11.34 is the 0.99 quantile.
        let q = ActionValueTable::from_vec(1, 4, vec![1., 3., 2., 0.]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[epsilon_greedy_action(&q, StateId(0), 1.0, &mut rng).unwrap().0] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.34, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn epsilon_point_one_greedy_frequency() {
        let q = ActionValueTable::from_vec(1, 4, vec![1., 3., 2., 0.]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| epsilon_greedy_action(&q, StateId(0), 0.1, &mut rng).unwrap() == ActionId(1))
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - (0.1 / 4.0 + 0.9)).abs() <= 0.02, "freq = {freq}");
    }

    #[test]
    fn rollout_examples() {
        let mdp = single_state(3.0, 0.5);
        let pi = Policy::uniform(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(rollout_return(&mdp, &pi, StateId(0), 0.5, 1, &mut rng).unwrap(), 3.0);

        let mdp = single_state(1.0, 0.5);
        let r = rollout_return(&mdp, &pi, StateId(0), 0.5, 3, &mut rng).unwrap();
        assert!((r - 1.75).abs() < 1e-15);
        assert!(rollout_return(&mdp, &pi, StateId(0), 0.5, 0, &mut rng).is_err());
    }

    #[test]
    fn rollouts_match_policy_evaluation() {
        let rows = vec![
            vec![Outcome::new(0, 0.5, 1.0), Outcome::new(1, 0.5, 0.0)],
            vec![Outcome::new(1, 0.2, -1.0), Outcome::new(2, 0.8, 2.0)],
            vec![Outcome::new(0, 1.0, 0.5)],
            vec![Outcome::new(2, 1.0, 0.0)],
            vec![Outcome::new(0, 0.3, 0.0), Outcome::new(2, 0.7, 1.0)],
            vec![Outcome::new(1, 1.0, 3.0)],
        ];
        let mdp = TabularMdp::new(3, 2, rows, &[], 0.8).unwrap();
        let pi = Policy::uniform(3, 2);
        let v = evaluate_policy(&mdp, &pi, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| rollout_return(&mdp, &pi, StateId(0), 0.8, 200, &mut rng).unwrap())
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - v.get(StateId(0))).abs() <= 3.0 * se, "mean {mean}, V {}", v.get(StateId(0)));
    }
}
