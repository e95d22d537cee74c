//! Plannable-transition model, planning value sweeps and macro extraction.
//!
//! The model tracks, for every candidate pair `(x, y)`, an estimate
//! `p_hat(x, y)` of the probability that the action `phi(x, y)` taken in `x`
//! lands in `y`, plus a reward estimate `r_hat(x, y)`. Pairs with
//! `p_hat >= kappa` are treated as sure transitions by the planner.

use crate::learners::LearningRateSchedule;
use crate::mdp::{epsilon_greedy_action, ActionId, ActionValueTable, MdpError, StateId, TabularMdp, Transition};
use rand::Rng;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("no inverse dynamics defined for pair ({x}, {y})")]
    UndefinedPair { x: StateId, y: StateId },
    #[error("state index {index} out of range (n_states = {n_states})")]
    InvalidState { index: usize, n_states: usize },
    #[error("pair ({x}, {y}) declared twice")]
    DuplicatePair { x: StateId, y: StateId },
    #[error("kappa must lie in [0, 1], got {0}")]
    Kappa(f64),
    #[error("planning discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("{0}")]
    Argument(String),
    #[error("bad macro line: {0}")]
    MacroFormat(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// `phi(x, y)`: the action realising the transition `x -> y`, defined on a
/// declared set of candidate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDynamics {
    successors: Vec<Vec<(StateId, ActionId)>>,
}

impl InverseDynamics {
    pub fn new<I>(n_states: usize, pairs: I) -> Result<Self, PlannerError>
    where
        I: IntoIterator<Item = (StateId, StateId, ActionId)>,
    {
        let mut successors = vec![Vec::new(); n_states];
        for (x, y, a) in pairs {
            for s in [x, y] {
                if s.0 >= n_states {
                    return Err(PlannerError::InvalidState { index: s.0, n_states });
                }
            }
            successors[x.0].push((y, a));
        }
        for (x, list) in successors.iter_mut().enumerate() {
            list.sort_by_key(|(y, _)| *y);
            if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(PlannerError::DuplicatePair { x: StateId(x), y: w[0].0 });
            }
        }
        Ok(InverseDynamics { successors })
    }

    pub fn n_states(&self) -> usize {
        self.successors.len()
    }

    pub fn action(&self, x: StateId, y: StateId) -> Result<ActionId, PlannerError> {
        self.successors
            .get(x.0)
            .and_then(|list| list.binary_search_by_key(&y, |(s, _)| *s).ok().map(|i| list[i].1))
            .ok_or(PlannerError::UndefinedPair { x, y })
    }

    /// Candidate successors of `x` with their actions, ascending by state.
    pub fn successors(&self, x: StateId) -> &[(StateId, ActionId)] {
        &self.successors[x.0]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (StateId, StateId, ActionId)> + '_ {
        self.successors.iter().enumerate().flat_map(|(x, list)| list.iter().map(move |&(y, a)| (StateId(x), y, a)))
    }

    pub fn n_pairs(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }
}

/// Initial value of `p_hat` for pairs never updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelInit {
    /// `p_hat_0 = 1`: every candidate starts plannable.
    #[default]
    Optimistic,
    /// `p_hat_0 = 0`: nothing is plannable until observed.
    Pessimistic,
}

impl ModelInit {
    pub fn initial_probability(self) -> f64 {
        match self {
            ModelInit::Optimistic => 1.0,
            ModelInit::Pessimistic => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kappa: f64,
    pub schedule: LearningRateSchedule,
    pub init: ModelInit,
}

/// Estimates of `p_hat` and `r_hat` over the candidate pairs, stored
/// contiguously per origin state.
#[derive(Debug, Clone)]
pub struct PlannableModel {
    kappa: f64,
    schedule: LearningRateSchedule,
    init: ModelInit,
    offsets: Vec<usize>,
    targets: Vec<StateId>,
    actions: Vec<ActionId>,
    p_hat: Vec<f64>,
    r_hat: Vec<f64>,
    p_visits: Vec<u64>,
    r_visits: Vec<u64>,
}

impl PlannableModel {
    /// Candidate pairs are the domain of `phi` minus pairs leaving a
    /// terminal state.
    pub fn new(phi: &InverseDynamics, terminals: &[StateId], config: ModelConfig) -> Result<Self, PlannerError> {
        if !(0.0..=1.0).contains(&config.kappa) {
            return Err(PlannerError::Kappa(config.kappa));
        }
        config.schedule.validate().map_err(|e| PlannerError::Argument(e.to_string()))?;
        let n = phi.n_states();
        let mut terminal = vec![false; n];
        for t in terminals {
            if t.0 >= n {
                return Err(PlannerError::InvalidState { index: t.0, n_states: n });
            }
            terminal[t.0] = true;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut actions = Vec::new();
        offsets.push(0);
        for (x, &is_terminal) in terminal.iter().enumerate() {
            if !is_terminal {
                for &(y, a) in phi.successors(StateId(x)) {
                    targets.push(y);
                    actions.push(a);
                }
            }
            offsets.push(targets.len());
        }
        let m = targets.len();
        Ok(PlannableModel {
            kappa: config.kappa,
            schedule: config.schedule,
            init: config.init,
            offsets,
            targets,
            actions,
            p_hat: vec![config.init.initial_probability(); m],
            r_hat: vec![0.0; m],
            p_visits: vec![0; m],
            r_visits: vec![0; m],
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn set_kappa(&mut self, kappa: f64) -> Result<(), PlannerError> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(PlannerError::Kappa(kappa));
        }
        self.kappa = kappa;
        Ok(())
    }

    pub fn init(&self) -> ModelInit {
        self.init
    }

    pub fn n_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_pairs(&self) -> usize {
        self.targets.len()
    }

    fn range(&self, x: StateId) -> std::ops::Range<usize> {
        self.offsets[x.0]..self.offsets[x.0 + 1]
    }

    fn find(&self, x: StateId, y: StateId) -> Option<usize> {
        let r = self.range(x);
        let start = r.start;
        self.targets[r].binary_search(&y).ok().map(|i| start + i)
    }

    /// Candidate successors of `x`, ascending.
    pub fn candidates(&self, x: StateId) -> &[StateId] {
        &self.targets[self.range(x)]
    }

    pub fn p_hat(&self, x: StateId, y: StateId) -> Option<f64> {
        self.find(x, y).map(|k| self.p_hat[k])
    }

    pub fn r_hat(&self, x: StateId, y: StateId) -> Option<f64> {
        self.find(x, y).map(|k| self.r_hat[k])
    }

    /// Number of times `p_hat(x, y)` has been updated.
    pub fn visits(&self, x: StateId, y: StateId) -> Option<u64> {
        self.find(x, y).map(|k| self.p_visits[k])
    }

    /// Overwrites the estimate for one pair.
    pub fn set_estimate(&mut self, x: StateId, y: StateId, p_hat: f64, r_hat: f64) -> Result<(), PlannerError> {
        if !(0.0..=1.0).contains(&p_hat) || !r_hat.is_finite() {
            return Err(PlannerError::Argument(format!("invalid estimate ({p_hat}, {r_hat})")));
        }
        let k = self.find(x, y).ok_or(PlannerError::UndefinedPair { x, y })?;
        self.p_hat[k] = p_hat;
        self.r_hat[k] = r_hat;
        Ok(())
    }

    /// Installs the true `P(x, phi(x,y), y)` and arrival rewards of `mdp`.
    pub fn install_exact(&mut self, mdp: &TabularMdp) -> Result<(), PlannerError> {
        if mdp.n_states() != self.n_states() {
            return Err(PlannerError::Argument("model and MDP sizes differ".into()));
        }
        for x in 0..self.n_states() {
            for k in self.range(StateId(x)) {
                let (y, a) = (self.targets[k], self.actions[k]);
                mdp.check_action(a)?;
                let row = mdp.outcomes(StateId(x), a);
                let hit = row.iter().find(|o| o.next == y);
                self.p_hat[k] = hit.map_or(0.0, |o| o.prob);
                self.r_hat[k] = hit.map_or_else(|| mdp.expected_reward(StateId(x), a), |o| o.reward);
            }
        }
        Ok(())
    }

    /// Exponential-averaging update from one real transition.
    ///
    /// Every candidate `(s, y)` with `phi(s, y) = a` moves towards
    /// `[y = s']`. `r_hat(s, s')` averages observed rewards; its first
    /// observation is taken as is.
    pub fn update(&mut self, t: &Transition) {
        for k in self.range(t.state) {
            if self.actions[k] != t.action {
                continue;
            }
            self.p_visits[k] += 1;
            let alpha = self.schedule.rate(self.p_visits[k]);
            let hit = if self.targets[k] == t.next_state { 1.0 } else { 0.0 };
            self.p_hat[k] = (1.0 - alpha) * self.p_hat[k] + alpha * hit;
        }
        if let Some(k) = self.find(t.state, t.next_state) {
            self.r_visits[k] += 1;
            let alpha = if self.r_visits[k] == 1 { 1.0 } else { self.schedule.rate(self.r_visits[k]) };
            self.r_hat[k] = (1.0 - alpha) * self.r_hat[k] + alpha * t.reward;
        }
    }

    fn plannable_indices(&self, x: StateId) -> impl Iterator<Item = usize> + '_ {
        self.range(x).filter(move |&k| self.p_hat[k] >= self.kappa)
    }

    /// `T(x) = { y : p_hat(x, y) >= kappa }`, ascending.
    pub fn plannable_set(&self, x: StateId) -> Vec<StateId> {
        self.plannable_indices(x).map(|k| self.targets[k]).collect()
    }

    /// All kappa-plannable pairs.
    pub fn plannable_edges(&self) -> Vec<(StateId, StateId)> {
        (0..self.n_states())
            .flat_map(|x| self.plannable_indices(StateId(x)).map(move |k| (StateId(x), self.targets[k])))
            .collect()
    }

    /// Connected components of the undirected graph of plannable pairs.
    ///
    /// States touching no plannable pair are left out. Components are
    /// sorted internally and ordered by their smallest member.
    pub fn plannable_domains(&self) -> Vec<Vec<StateId>> {
        let n = self.n_states();
        let mut adjacency = vec![Vec::new(); n];
        for (x, y) in self.plannable_edges() {
            if x != y {
                adjacency[x.0].push(y.0);
                adjacency[y.0].push(x.0);
            }
        }
        let mut seen = vec![false; n];
        let mut domains = Vec::new();
        for root in 0..n {
            if seen[root] || adjacency[root].is_empty() {
                continue;
            }
            seen[root] = true;
            let mut stack = vec![root];
            let mut members = Vec::new();
            while let Some(x) = stack.pop() {
                members.push(StateId(x));
                for &y in &adjacency[x] {
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            members.sort();
            domains.push(members);
        }
        domains
    }

    /// `(best value, successor, action)` over `T(x)` for the planning
    /// backup, lowest state index on ties.
    fn best_plannable(&self, x: StateId, v_hat: &PlanningValueTable) -> Option<(f64, StateId, ActionId)> {
        let mut best: Option<(f64, StateId, ActionId)> = None;
        for k in self.plannable_indices(x) {
            let y = self.targets[k];
            let value = self.r_hat[k] + v_hat.discount * v_hat.values[y.0];
            if best.is_none_or(|(b, _, _)| value > b) {
                best = Some((value, y, self.actions[k]));
            }
        }
        best
    }

    /// CSV dump of every candidate pair: `x,y,p_hat,r_hat`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,p_hat,r_hat\n");
        for x in 0..self.n_states() {
            for k in self.range(StateId(x)) {
                out.push_str(&format!("{},{},{},{}\n", x, self.targets[k], self.p_hat[k], self.r_hat[k]));
            }
        }
        out
    }

    /// Raw per-pair state, in candidate order.
    pub fn raw(&self) -> ModelState<'_> {
        ModelState { p_hat: &self.p_hat, r_hat: &self.r_hat, p_visits: &self.p_visits, r_visits: &self.r_visits }
    }

    pub fn restore(&mut self, p_hat: Vec<f64>, r_hat: Vec<f64>, p_visits: Vec<u64>, r_visits: Vec<u64>) -> Result<(), PlannerError> {
        let m = self.n_pairs();
        if [p_hat.len(), r_hat.len(), p_visits.len(), r_visits.len()].iter().any(|&l| l != m) {
            return Err(PlannerError::Argument(format!("model state must have {m} pairs")));
        }
        if p_hat.iter().any(|p| !(0.0..=1.0).contains(p)) || r_hat.iter().any(|r| !r.is_finite()) {
            return Err(PlannerError::Argument("model estimates out of range".into()));
        }
        self.p_hat = p_hat;
        self.r_hat = r_hat;
        self.p_visits = p_visits;
        self.r_visits = r_visits;
        Ok(())
    }
}

/// Borrowed view of the model's per-pair arrays.
#[derive(Debug, Clone, Copy)]
pub struct ModelState<'a> {
    pub p_hat: &'a [f64],
    pub r_hat: &'a [f64],
    pub p_visits: &'a [u64],
    pub r_visits: &'a [u64],
}

/// The planning value function `V_hat` with its own discount.
#[derive(Debug, Clone)]
pub struct PlanningValueTable {
    values: Vec<f64>,
    discount: f64,
    marks: Vec<u32>,
    stamp: u32,
}

impl PlanningValueTable {
    /// Starts as a copy of the basic values `max_a Q(x, a)`.
    pub fn new(basic: &ActionValueTable, discount: f64) -> Result<Self, PlannerError> {
        if !(0.0..1.0).contains(&discount) {
            return Err(PlannerError::Discount(discount));
        }
        let values = basic.state_values().into_vec();
        let n = values.len();
        Ok(PlanningValueTable { values, discount, marks: vec![0; n], stamp: 0 })
    }

    pub fn discount(&self) -> f64 {
        self.discount
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

    pub fn restore(&mut self, values: Vec<f64>) -> Result<(), PlannerError> {
        if values.len() != self.values.len() {
            return Err(PlannerError::Argument("planning table length differs".into()));
        }
        self.values = values;
        Ok(())
    }

    fn next_stamp(&mut self) -> u32 {
        if self.stamp == u32::MAX {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.stamp = 0;
        }
        self.stamp += 1;
        self.stamp
    }
}

/// Planning backup of one state; returns the new value.
fn backup_state(model: &PlannableModel, v_hat: &mut PlanningValueTable, basic_q: &ActionValueTable, x: StateId) -> f64 {
    let basic = basic_q.max(x);
    let value = match model.best_plannable(x, v_hat) {
        Some((best, _, _)) => best.max(basic),
        None => basic,
    };
    v_hat.values[x.0] = value;
    value
}

/// Breadth-first planning sweep of at most `node_budget` backups around
/// `origin`, following plannable pairs in discovery order.
pub fn planning_sweep(
    model: &PlannableModel,
    v_hat: &mut PlanningValueTable,
    basic_q: &ActionValueTable,
    origin: StateId,
    node_budget: usize,
) {
    if node_budget == 0 {
        return;
    }
    let stamp = v_hat.next_stamp();
    let mut queue = VecDeque::with_capacity(node_budget);
    v_hat.marks[origin.0] = stamp;
    queue.push_back(origin);
    let mut done = 0;
    while let Some(x) = queue.pop_front() {
        backup_state(model, v_hat, basic_q, x);
        done += 1;
        if done == node_budget {
            break;
        }
        for k in model.plannable_indices(x) {
            let y = model.targets[k];
            if v_hat.marks[y.0] != stamp {
                v_hat.marks[y.0] = stamp;
                queue.push_back(y);
            }
        }
    }
}

/// Gauss-Seidel sweeps over every state until no value moves by more than
/// `tol`. Returns the number of sweeps.
pub fn planning_fixpoint(
    model: &PlannableModel,
    v_hat: &mut PlanningValueTable,
    basic_q: &ActionValueTable,
    tol: f64,
    max_sweeps: usize,
) -> Result<usize, PlannerError> {
    for sweep in 1..=max_sweeps {
        let mut change: f64 = 0.0;
        for x in 0..model.n_states() {
            let old = v_hat.values[x];
            let new = backup_state(model, v_hat, basic_q, StateId(x));
            change = change.max((new - old).abs());
        }
        if change <= tol {
            return Ok(sweep);
        }
    }
    Err(PlannerError::Argument(format!("planning values did not settle within {max_sweeps} sweeps")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Planning,
    Basic,
}

/// `S(x)`: greedy plannable successor under `V_hat`.
pub fn greedy_successor(model: &PlannableModel, v_hat: &PlanningValueTable, x: StateId) -> Option<(StateId, ActionId)> {
    model.best_plannable(x, v_hat).map(|(_, y, a)| (y, a))
}

/// Follows the planning policy when `V_hat(x) > V(x)` and `T(x)` is not
/// empty, otherwise acts epsilon-greedily on the basic values. Planning
/// choices consume no randomness.
pub fn select_action<R: Rng + ?Sized>(
    model: &PlannableModel,
    v_hat: &PlanningValueTable,
    basic_q: &ActionValueTable,
    x: StateId,
    eps: f64,
    rng: &mut R,
) -> Result<(ActionId, SelectionMode), MdpError> {
    if v_hat.get(x) > basic_q.max(x) {
        if let Some((_, a)) = greedy_successor(model, v_hat, x) {
            return Ok((a, SelectionMode::Planning));
        }
    }
    Ok((epsilon_greedy_action(basic_q, x, eps, rng)?, SelectionMode::Basic))
}

/// An action sequence encoded by the planning values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Macro {
    pub start: StateId,
    pub actions: Vec<ActionId>,
    /// `start` followed by each planned arrival; one longer than `actions`.
    pub planned_states: Vec<StateId>,
}

impl Macro {
    pub fn empty(start: StateId) -> Self {
        Macro { start, actions: Vec::new(), planned_states: vec![start] }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Macro {
    /// `start; a,a,...; s,s,...`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}; {}; {}", self.start, join(&self.actions), join(&self.planned_states))
    }
}

impl FromStr for Macro {
    type Err = PlannerError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| PlannerError::MacroFormat(msg.to_string());
        let parts: Vec<&str> = line.trim().split(';').map(str::trim).collect();
        let [start, actions, states] = parts[..] else {
            return Err(bad("expected three ';'-separated fields"));
        };
        fn list(field: &str) -> Result<Vec<usize>, PlannerError> {
            if field.is_empty() {
                return Ok(Vec::new());
            }
            field
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| PlannerError::MacroFormat(format!("{s:?}: {e}"))))
                .collect()
        }
        let start = StateId(start.parse().map_err(|_| bad("start is not an index"))?);
        let actions: Vec<ActionId> = list(actions)?.into_iter().map(ActionId).collect();
        let planned_states: Vec<StateId> = list(states)?.into_iter().map(StateId).collect();
        if planned_states.len() != actions.len() + 1 || planned_states[0] != start {
            return Err(bad("planned states must be the start followed by one state per action"));
        }
        Ok(Macro { start, actions, planned_states })
    }
}

/// Follows `x, S(x), S(S(x)), ...` collecting `phi` actions.
///
/// Stops after the step arriving in a state whose planning value falls below
/// its basic value, when the current state has no plannable successor, after
/// `max_len` actions, or before revisiting a state. Returns an empty macro
/// when `V_hat(x) <= V(x)`.
pub fn extract_macro(
    model: &PlannableModel,
    v_hat: &PlanningValueTable,
    basic_q: &ActionValueTable,
    x: StateId,
    max_len: usize,
) -> Result<Macro, PlannerError> {
    if max_len == 0 {
        return Err(PlannerError::Argument("max_len must be at least 1".into()));
    }
    let mut m = Macro::empty(x);
    if v_hat.get(x) <= basic_q.max(x) {
        return Ok(m);
    }
    let mut current = x;
    while m.actions.len() < max_len {
        let Some((next, action)) = greedy_successor(model, v_hat, current) else { break };
        if m.planned_states.contains(&next) {
            break;
        }
        m.actions.push(action);
        m.planned_states.push(next);
        if v_hat.get(next) < basic_q.max(next) {
            break;
        }
        current = next;
    }
    Ok(m)
}
