//! The step loop shared by SARSA, Q-learning and pRL agents.
//!
//! A pRL step executes the pending action, feeds the real transition to the
//! model, sweeps planning values around the new state, picks the next
//! action there (planning or basic), and finally applies the SARSA update
//! with that action. Without a planner the same loop is plain SARSA(lambda)
//! or Q-learning.

use crate::learners::{LearningRateSchedule, QLearner, QLearningConfig, SarsaConfig, SarsaLearner};
use crate::mdp::{epsilon_greedy_action, ActionId, ActionValueTable, Environment, MdpError, StateId, Transition};
use crate::planner::{
    extract_macro, planning_sweep, select_action, InverseDynamics, Macro, ModelConfig, ModelInit, PlannableModel,
    PlannerError, PlanningValueTable, SelectionMode,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sarsa,
    Qlearning,
    Prl,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sarsa => "sarsa",
            Algorithm::Qlearning => "qlearning",
            Algorithm::Prl => "prl",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sarsa" => Ok(Algorithm::Sarsa),
            "qlearning" => Ok(Algorithm::Qlearning),
            "prl" => Ok(Algorithm::Prl),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub discount: f64,
    pub gamma_plan: f64,
    pub lambda: f64,
    pub eps: f64,
    pub schedule: LearningRateSchedule,
    pub model_schedule: LearningRateSchedule,
    pub kappa: f64,
    pub node_budget: usize,
    pub model_init: ModelInit,
    pub max_steps_per_episode: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            algorithm: Algorithm::Prl,
            discount: 0.98,
            gamma_plan: 0.98,
            lambda: 0.95,
            eps: 0.1,
            schedule: LearningRateSchedule::Constant { alpha: 0.001 },
            model_schedule: LearningRateSchedule::Constant { alpha: 0.001 },
            kappa: 0.95,
            node_budget: 10,
            model_init: ModelInit::Optimistic,
            max_steps_per_episode: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
enum Learner {
    Sarsa(SarsaLearner),
    Q(QLearner),
}

/// Planning state of a pRL agent.
#[derive(Debug, Clone)]
pub struct Planner {
    pub model: PlannableModel,
    pub v_hat: PlanningValueTable,
    pub node_budget: usize,
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeEnd {
    pub steps: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub transition: Transition,
    pub mode: SelectionMode,
    pub episode_end: Option<EpisodeEnd>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    learner: Learner,
    planner: Option<Planner>,
    eps: f64,
    start: StateId,
    state: StateId,
    pending: Option<(ActionId, SelectionMode)>,
    episode_steps: usize,
    max_steps: usize,
}

impl Agent {
    /// `phi` and `terminals` are needed only for pRL.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        start: StateId,
        phi: Option<&InverseDynamics>,
        terminals: &[StateId],
        config: &AgentConfig,
    ) -> Result<Self, PlannerError> {
        config.schedule.validate().map_err(|e| PlannerError::Argument(e.to_string()))?;
        if !(0.0..=1.0).contains(&config.eps) || !(0.0..=1.0).contains(&config.lambda) {
            return Err(PlannerError::Argument("eps and lambda must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&config.discount) {
            return Err(PlannerError::Discount(config.discount));
        }
        if config.max_steps_per_episode == 0 {
            return Err(PlannerError::Argument("max_steps_per_episode must be at least 1".into()));
        }
        if start.0 >= n_states {
            return Err(PlannerError::InvalidState { index: start.0, n_states });
        }
        let learner = match config.algorithm {
            Algorithm::Sarsa | Algorithm::Prl => Learner::Sarsa(SarsaLearner::new(
                n_states,
                n_actions,
                SarsaConfig { discount: config.discount, lambda: config.lambda, schedule: config.schedule, eps: config.eps },
            )),
            Algorithm::Qlearning => Learner::Q(QLearner::new(
                n_states,
                n_actions,
                QLearningConfig { discount: config.discount, schedule: config.schedule, eps: config.eps },
            )),
        };
        let planner = match config.algorithm {
            Algorithm::Prl => {
                let phi = phi.ok_or_else(|| PlannerError::Argument("pRL needs inverse dynamics".into()))?;
                if phi.n_states() != n_states {
                    return Err(PlannerError::Argument("inverse dynamics size differs from the environment".into()));
                }
                let model = PlannableModel::new(
                    phi,
                    terminals,
                    ModelConfig { kappa: config.kappa, schedule: config.model_schedule, init: config.model_init },
                )?;
                let v_hat = PlanningValueTable::new(&ActionValueTable::zeros(n_states, n_actions), config.gamma_plan)?;
                Some(Planner { model, v_hat, node_budget: config.node_budget })
            }
            _ => None,
        };
        Ok(Agent {
            learner,
            planner,
            eps: config.eps,
            start,
            state: start,
            pending: None,
            episode_steps: 0,
            max_steps: config.max_steps_per_episode,
        })
    }

    pub fn q(&self) -> &ActionValueTable {
        match &self.learner {
            Learner::Sarsa(l) => l.q(),
            Learner::Q(l) => l.q(),
        }
    }

    pub fn planner(&self) -> Option<&Planner> {
        self.planner.as_ref()
    }

    pub fn planner_mut(&mut self) -> Option<&mut Planner> {
        self.planner.as_mut()
    }

    pub fn sarsa(&self) -> Option<&SarsaLearner> {
        match &self.learner {
            Learner::Sarsa(l) => Some(l),
            Learner::Q(_) => None,
        }
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn episode_steps(&self) -> usize {
        self.episode_steps
    }

    pub fn pending_action(&self) -> Option<(ActionId, SelectionMode)> {
        self.pending
    }

    fn choose<R: Rng + ?Sized>(&self, x: StateId, eps: f64, rng: &mut R) -> Result<(ActionId, SelectionMode), MdpError> {
        match &self.planner {
            Some(p) if p.node_budget > 0 => select_action(&p.model, &p.v_hat, self.q(), x, eps, rng),
            _ => Ok((epsilon_greedy_action(self.q(), x, eps, rng)?, SelectionMode::Basic)),
        }
    }

    fn sweep(&mut self, origin: StateId) {
        let q = match &self.learner {
            Learner::Sarsa(l) => l.q(),
            Learner::Q(l) => l.q(),
        };
        if let Some(p) = self.planner.as_mut() {
            planning_sweep(&p.model, &mut p.v_hat, q, origin, p.node_budget);
        }
    }

    fn begin_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), MdpError> {
        self.state = self.start;
        self.episode_steps = 0;
        self.sweep(self.start);
        self.pending = Some(self.choose(self.start, self.eps, rng)?);
        Ok(())
    }

    /// One interaction with the environment.
    pub fn step<E: Environment, R: Rng + ?Sized>(&mut self, env: &mut E, rng: &mut R) -> Result<StepOutcome, MdpError> {
        if self.pending.is_none() {
            self.begin_episode(rng)?;
        }
        let (action, mode) = self.pending.take().expect("pending action set above");
        let t = env.step(self.state, action, rng)?;
        self.episode_steps += 1;

        if let Some(p) = self.planner.as_mut() {
            p.model.update(&t);
        }
        self.sweep(t.next_state);

        let truncated = !t.done && self.episode_steps >= self.max_steps;
        let next = if t.done { None } else { Some(self.choose(t.next_state, self.eps, rng)?) };
        match &mut self.learner {
            Learner::Sarsa(l) => l.sarsa_step(&t, next.map_or(ActionId(0), |(a, _)| a)),
            Learner::Q(l) => l.q_learning_step(&t),
        }

        let episode_end = if t.done || truncated {
            if let Learner::Sarsa(l) = &mut self.learner {
                l.clear_traces();
            }
            let end = EpisodeEnd { steps: self.episode_steps, truncated };
            self.pending = None;
            self.state = self.start;
            self.episode_steps = 0;
            Some(end)
        } else {
            self.state = t.next_state;
            self.pending = next;
            None
        };
        Ok(StepOutcome { transition: t, mode, episode_end })
    }

    /// Runs one full episode and reports how it ended.
    pub fn run_episode<E: Environment, R: Rng + ?Sized>(&mut self, env: &mut E, rng: &mut R) -> Result<EpisodeEnd, MdpError> {
        loop {
            if let Some(end) = self.step(env, rng)?.episode_end {
                return Ok(end);
            }
        }
    }

    /// Runs the learned policy with exploration and learning switched off.
    pub fn evaluate_episode<E: Environment, R: Rng + ?Sized>(
        &self,
        env: &mut E,
        rng: &mut R,
        max_steps: usize,
    ) -> Result<EpisodeEnd, MdpError> {
        let mut x = self.start;
        for steps in 1..=max_steps {
            let (a, _) = self.choose(x, 0.0, rng)?;
            let t = env.step(x, a, rng)?;
            if t.done {
                return Ok(EpisodeEnd { steps, truncated: false });
            }
            x = t.next_state;
        }
        Ok(EpisodeEnd { steps: max_steps, truncated: true })
    }

    /// Macro encoded by the planning values at `x`, if this agent plans.
    pub fn macro_at(&self, x: StateId, max_len: usize) -> Option<Result<Macro, PlannerError>> {
        self.planner.as_ref().map(|p| extract_macro(&p.model, &p.v_hat, self.q(), x, max_len))
    }

    pub(crate) fn restore_learner(&mut self, q: ActionValueTable, eligibility: Option<Vec<f64>>, visits: Vec<u64>) -> Result<(), MdpError> {
        match &mut self.learner {
            Learner::Sarsa(l) => {
                let e = eligibility.ok_or_else(|| MdpError::Argument("missing eligibility table".into()))?;
                l.restore(q, e, visits)
            }
            Learner::Q(l) => l.restore(q, visits),
        }
    }

    pub(crate) fn learner_visits(&self) -> &[u64] {
        match &self.learner {
            Learner::Sarsa(l) => l.visits(),
            Learner::Q(l) => l.visits(),
        }
    }

    pub(crate) fn restore_position(
        &mut self,
        state: StateId,
        pending: Option<(ActionId, SelectionMode)>,
        episode_steps: usize,
    ) -> Result<(), MdpError> {
        let n = self.q().n_states();
        if state.0 >= n {
            return Err(MdpError::InvalidState { index: state.0, n_states: n });
        }
        if let Some((a, _)) = pending {
            if a.0 >= self.q().n_actions() {
                return Err(MdpError::InvalidAction { index: a.0, n_actions: self.q().n_actions() });
            }
        }
        self.state = state;
        self.pending = pending;
        self.episode_steps = episode_steps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{compile_mdp, generate_maze, inverse_dynamics, MazeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(kappa: f64, init: ModelInit, node_budget: usize, algorithm: Algorithm) -> (crate::TabularMdp, Agent) {
        let maze = generate_maze(&MazeConfig { seed: 1, ..MazeConfig::desk() }).unwrap();
        let mdp = compile_mdp(&maze, 0.98).unwrap();
        let phi = inverse_dynamics(&maze).unwrap();
        let cfg = AgentConfig {
            algorithm,
            kappa,
            model_init: init,
            node_budget,
            schedule: LearningRateSchedule::Constant { alpha: 0.1 },
            model_schedule: LearningRateSchedule::Constant { alpha: 0.1 },
            max_steps_per_episode: 500,
            ..AgentConfig::default()
        };
        let agent = Agent::new(mdp.n_states(), 4, maze.start(), Some(&phi), &[maze.goal], &cfg).unwrap();
        (mdp, agent)
    }

    fn trace(mut mdp: crate::TabularMdp, mut agent: Agent, steps: usize) -> (Vec<Transition>, Vec<u64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ts = (0..steps).map(|_| agent.step(&mut mdp, &mut rng).unwrap().transition).collect();
        (ts, agent.q().as_slice().iter().map(|v| v.to_bits()).collect())
    }

    #[test]
    fn kappa_one_pessimistic_equals_sarsa() {
        let (mdp, prl) = setup(1.0, ModelInit::Pessimistic, 10, Algorithm::Prl);
        let (_, sarsa) = setup(1.0, ModelInit::Pessimistic, 10, Algorithm::Sarsa);
        assert_eq!(trace(mdp.clone(), prl, 20_000), trace(mdp, sarsa, 20_000));
    }

    #[test]
    fn zero_budget_equals_sarsa() {
        let (mdp, prl) = setup(0.5, ModelInit::Optimistic, 0, Algorithm::Prl);
        let (_, sarsa) = setup(0.5, ModelInit::Optimistic, 0, Algorithm::Sarsa);
        assert_eq!(trace(mdp.clone(), prl, 10_000), trace(mdp, sarsa, 10_000));
    }

    #[test]
    fn planning_mode_is_used_with_optimistic_model() {
        let (mut mdp, mut agent) = setup(0.5, ModelInit::Optimistic, 10, Algorithm::Prl);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let planned = (0..5_000)
            .filter(|_| agent.step(&mut mdp, &mut rng).unwrap().mode == SelectionMode::Planning)
            .count();
        assert!(planned > 0);
        let p = agent.planner().unwrap();
        for x in 0..mdp.n_states() {
            assert!(p.v_hat.get(StateId(x)).is_finite());
        }
    }

    #[test]
    fn episodes_end_and_truncate() {
        let (mut mdp, mut agent) = setup(0.5, ModelInit::Optimistic, 10, Algorithm::Qlearning);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let end = agent.run_episode(&mut mdp, &mut rng).unwrap();
        assert!(end.steps >= 18 && end.steps <= 500);
        assert_eq!(end.truncated, end.steps == 500);
        assert_eq!(agent.state(), agent.start());
        assert!(agent.macro_at(StateId(0), 5).is_none());
    }

    #[test]
    fn rejects_prl_without_inverse_dynamics() {
        let cfg = AgentConfig::default();
        assert!(Agent::new(4, 4, StateId(0), None, &[], &cfg).is_err());
    }
}
