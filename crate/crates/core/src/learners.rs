//! Model-free learners for the basic action-value function.

use crate::mdp::{epsilon_greedy_action, ActionId, ActionValueTable, MdpError, StateId, Transition};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Traces below this are dropped from the active set.
pub const TRACE_CUTOFF: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("constant learning rate must lie in [0, 1], got {0}")]
    Constant(f64),
    #[error("robbins-monro schedule needs c > 0, offset >= 0 and c <= offset + 1 (got c = {c}, offset = {offset})")]
    RobbinsMonro { c: f64, offset: f64 },
}

/// Per-visit learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRateSchedule {
    Constant { alpha: f64 },
    /// `alpha_n = c / (offset + n)` on the n-th visit of a pair.
    RobbinsMonro { c: f64, offset: f64 },
}

impl LearningRateSchedule {
    pub fn constant(alpha: f64) -> Result<Self, ScheduleError> {
        let s = LearningRateSchedule::Constant { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn robbins_monro(c: f64, offset: f64) -> Result<Self, ScheduleError> {
        let s = LearningRateSchedule::RobbinsMonro { c, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            LearningRateSchedule::Constant { alpha } => {
                if (0.0..=1.0).contains(&alpha) {
                    Ok(())
                } else {
                    Err(ScheduleError::Constant(alpha))
                }
            }
            LearningRateSchedule::RobbinsMonro { c, offset } => {
                if c > 0.0 && offset >= 0.0 && c <= offset + 1.0 && c.is_finite() && offset.is_finite() {
                    Ok(())
                } else {
                    Err(ScheduleError::RobbinsMonro { c, offset })
                }
            }
        }
    }

    /// Rate for the `visits`-th visit (1-based).
    pub fn rate(&self, visits: u64) -> f64 {
        match *self {
            LearningRateSchedule::Constant { alpha } => alpha,
            LearningRateSchedule::RobbinsMonro { c, offset } => c / (offset + visits.max(1) as f64),
        }
    }

    pub fn is_robbins_monro(&self) -> bool {
        matches!(self, LearningRateSchedule::RobbinsMonro { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SarsaConfig {
    pub discount: f64,
    pub lambda: f64,
    pub schedule: LearningRateSchedule,
    pub eps: f64,
}

/// SARSA(lambda) with replacing traces.
#[derive(Debug, Clone)]
pub struct SarsaLearner {
    q: ActionValueTable,
    eligibility: Vec<f64>,
    active: Vec<usize>,
    visits: Vec<u64>,
    pub discount: f64,
    pub lambda: f64,
    pub schedule: LearningRateSchedule,
    pub eps: f64,
}

impl SarsaLearner {
    pub fn new(n_states: usize, n_actions: usize, config: SarsaConfig) -> Self {
        Self::with_q(ActionValueTable::zeros(n_states, n_actions), config)
    }

    pub fn with_q(q: ActionValueTable, config: SarsaConfig) -> Self {
        let n = q.as_slice().len();
        SarsaLearner {
            q,
            eligibility: vec![0.0; n],
            active: Vec::new(),
            visits: vec![0; n],
            discount: config.discount,
            lambda: config.lambda,
            schedule: config.schedule,
            eps: config.eps,
        }
    }

    pub fn q(&self) -> &ActionValueTable {
        &self.q
    }

    pub fn eligibility(&self, x: StateId, a: ActionId) -> f64 {
        self.eligibility[x.0 * self.q.n_actions() + a.0]
    }

    pub fn active_traces(&self) -> usize {
        self.active.len()
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    /// Restores learner state from a checkpoint.
    pub fn restore(&mut self, q: ActionValueTable, eligibility: Vec<f64>, visits: Vec<u64>) -> Result<(), MdpError> {
        let n = self.q.as_slice().len();
        if q.n_states() != self.q.n_states() || q.n_actions() != self.q.n_actions() || eligibility.len() != n || visits.len() != n {
            return Err(MdpError::Argument("learner state dimensions differ".into()));
        }
        self.active = (0..n).filter(|&i| eligibility[i] != 0.0).collect();
        self.q = q;
        self.eligibility = eligibility;
        self.visits = visits;
        Ok(())
    }

    pub fn eligibility_table(&self) -> &[f64] {
        &self.eligibility
    }

    pub fn act<R: Rng + ?Sized>(&self, x: StateId, rng: &mut R) -> Result<ActionId, MdpError> {
        epsilon_greedy_action(&self.q, x, self.eps, rng)
    }

    /// One SARSA(lambda) update. `next_action` is ignored on terminal
    /// transitions, after which the traces are cleared.
    pub fn sarsa_step(&mut self, t: &Transition, next_action: ActionId) {
        let n_actions = self.q.n_actions();
        let idx = t.state.0 * n_actions + t.action.0;
        self.visits[idx] += 1;
        let alpha = self.schedule.rate(self.visits[idx]);
        let q = self.q.as_mut_slice();
        let target = if t.done {
            t.reward
        } else {
            t.reward + self.discount * q[t.next_state.0 * n_actions + next_action.0]
        };
        let delta = target - q[idx];

        if self.eligibility[idx] == 0.0 {
            self.active.push(idx);
        }
        self.eligibility[idx] = 1.0;

        let decay = self.discount * self.lambda;
        let eligibility = &mut self.eligibility;
        self.active.retain(|&i| {
            q[i] += alpha * delta * eligibility[i];
            eligibility[i] *= decay;
            if eligibility[i] < TRACE_CUTOFF {
                eligibility[i] = 0.0;
                false
            } else {
                true
            }
        });

        if t.done {
            self.clear_traces();
        }
    }

    pub fn clear_traces(&mut self) {
        for &i in &self.active {
            self.eligibility[i] = 0.0;
        }
        self.active.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningConfig {
    pub discount: f64,
    pub schedule: LearningRateSchedule,
    pub eps: f64,
}

/// One-step Q-learning.
#[derive(Debug, Clone)]
pub struct QLearner {
    q: ActionValueTable,
    visits: Vec<u64>,
    pub discount: f64,
    pub schedule: LearningRateSchedule,
    pub eps: f64,
}

impl QLearner {
    pub fn new(n_states: usize, n_actions: usize, config: QLearningConfig) -> Self {
        Self::with_q(ActionValueTable::zeros(n_states, n_actions), config)
    }

    pub fn with_q(q: ActionValueTable, config: QLearningConfig) -> Self {
        let n = q.as_slice().len();
        QLearner { q, visits: vec![0; n], discount: config.discount, schedule: config.schedule, eps: config.eps }
    }

    pub fn q(&self) -> &ActionValueTable {
        &self.q
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    pub fn restore(&mut self, q: ActionValueTable, visits: Vec<u64>) -> Result<(), MdpError> {
        if q.as_slice().len() != self.q.as_slice().len() || visits.len() != self.visits.len() {
            return Err(MdpError::Argument("learner state dimensions differ".into()));
        }
        self.q = q;
        self.visits = visits;
        Ok(())
    }

    pub fn act<R: Rng + ?Sized>(&self, x: StateId, rng: &mut R) -> Result<ActionId, MdpError> {
        epsilon_greedy_action(&self.q, x, self.eps, rng)
    }

    /// `Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + gamma max_b Q(s',b))`.
    pub fn q_learning_step(&mut self, t: &Transition) {
        let idx = t.state.0 * self.q.n_actions() + t.action.0;
        self.visits[idx] += 1;
        let alpha = self.schedule.rate(self.visits[idx]);
        let target = if t.done { t.reward } else { t.reward + self.discount * self.q.max(t.next_state) };
        let q = self.q.as_mut_slice();
        q[idx] = (1.0 - alpha) * q[idx] + alpha * target;
    }
}

/// `V(x) = max_a Q(x, a)`.
pub fn basic_value(q: &ActionValueTable, x: StateId) -> f64 {
    q.max(x)
}
