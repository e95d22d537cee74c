//! Environments that drift within an L1 ball around a base MDP, and the
//! empirical checks of the resulting near-optimality bounds.

use crate::learners::{LearningRateSchedule, QLearner, QLearningConfig};
use crate::mdp::{
    epsilon_greedy_action, ActionId, Environment, MdpError, Outcome, StateId, TabularMdp, Transition, ValueTable,
};
use crate::planner::{planning_fixpoint, InverseDynamics, ModelConfig, ModelInit, PlannableModel, PlanningValueTable, PlannerError};
use crate::solver::{self, SolverError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Gap allowed at `kappa = 1`, where the bound collapses to zero.
pub const PLANNING_GAP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EpsError {
    #[error("epsilon must lie in [0, 2], got {0}")]
    Epsilon(f64),
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

/// `sum_i |a_i - b_i|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Returns a distribution within L1 distance `epsilon` of `row`.
///
/// The row is mixed with a random point of the simplex at weight
/// `m <= epsilon / 2`, which moves it by at most `2m` in L1. Draws that fail
/// the re-check after renormalisation are discarded.
pub fn perturb_kernel<R: Rng + ?Sized>(row: &[f64], epsilon: f64, rng: &mut R) -> Result<Vec<f64>, EpsError> {
    if !(0.0..=2.0).contains(&epsilon) {
        return Err(EpsError::Epsilon(epsilon));
    }
    if epsilon == 0.0 {
        return Ok(row.to_vec());
    }
    loop {
        let weight = rng.gen::<f64>() * epsilon / 2.0;
        // Exponential spacings give a uniform point on the simplex.
        let direction: Vec<f64> = row.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = direction.iter().sum();
        let mut out: Vec<f64> = row
            .iter()
            .zip(&direction)
            .map(|(p, d)| ((1.0 - weight) * p + weight * d / total).max(0.0))
            .collect();
        let sum: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= sum);
        if l1_distance(&out, row) <= epsilon {
            debug_assert!(out.iter().all(|p| *p >= 0.0));
            return Ok(out);
        }
    }
}

/// A base MDP whose rows are re-perturbed on every step.
///
/// Perturbations come from a private stream seeded by `perturbation_seed`,
/// so the caller's sampling stream is the same for every `epsilon`.
#[derive(Debug, Clone)]
pub struct EpsMdp {
    base: TabularMdp,
    epsilon: f64,
    perturbation_seed: u64,
    noise: ChaCha8Rng,
}

impl EpsMdp {
    pub fn new(base: TabularMdp, epsilon: f64, perturbation_seed: u64) -> Result<Self, EpsError> {
        if !(0.0..=2.0).contains(&epsilon) {
            return Err(EpsError::Epsilon(epsilon));
        }
        Ok(EpsMdp { base, epsilon, perturbation_seed, noise: ChaCha8Rng::seed_from_u64(perturbation_seed) })
    }

    pub fn base(&self) -> &TabularMdp {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn perturbation_seed(&self) -> u64 {
        self.perturbation_seed
    }

    /// Dense base row of `(x, a)`.
    fn dense_row(&self, x: StateId, a: ActionId) -> Vec<f64> {
        let mut row = vec![0.0; self.base.n_states()];
        for o in self.base.outcomes(x, a) {
            row[o.next.0] = o.prob;
        }
        row
    }

    /// Samples from a freshly perturbed copy of the `(x, a)` row. Terminal
    /// rows stay absorbing. Successors outside the base support pay the
    /// expected reward `R(x, a)`.
    pub fn eps_sample_transition<R: Rng + ?Sized>(&mut self, x: StateId, a: ActionId, rng: &mut R) -> Result<Transition, EpsError> {
        self.base.check_state(x)?;
        self.base.check_action(a)?;
        if self.epsilon == 0.0 || self.base.is_terminal(x) {
            return Ok(self.base.sample_transition(x, a, rng)?);
        }
        let base_row = self.dense_row(x, a);
        let row = perturb_kernel(&base_row, self.epsilon, &mut self.noise)?;
        debug_assert!(l1_distance(&row, &base_row) <= self.epsilon);
        let fallback = self.base.expected_reward(x, a);
        let outcomes: Vec<Outcome> = row
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(y, &p)| {
                let reward = self.base.outcomes(x, a).iter().find(|o| o.next.0 == y).map_or(fallback, |o| o.reward);
                Outcome::new(y, p, reward)
            })
            .collect();
        let o = crate::mdp::sample_outcome(&outcomes, rng);
        Ok(Transition { state: x, action: a, reward: o.reward, next_state: o.next, done: self.base.is_terminal(o.next) })
    }
}

impl Environment for EpsMdp {
    fn n_states(&self) -> usize {
        self.base.n_states()
    }

    fn n_actions(&self) -> usize {
        self.base.n_actions()
    }

    fn step<R: Rng + ?Sized>(&mut self, x: StateId, a: ActionId, rng: &mut R) -> Result<Transition, MdpError> {
        self.eps_sample_transition(x, a, rng).map_err(|e| match e {
            EpsError::Mdp(m) => m,
            other => MdpError::Argument(other.to_string()),
        })
    }
}

/// Random MDP with dense kernels and rewards depending on `(x, a)` only,
/// drawn uniformly from `[0, 1)`.
pub fn random_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, discount: f64, rng: &mut R) -> Result<TabularMdp, MdpError> {
    let rows = (0..n_states * n_actions)
        .map(|_| {
            let w: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let s: f64 = w.iter().sum();
            let r = rng.gen::<f64>();
            w.iter().enumerate().map(|(y, p)| Outcome::new(y, p / s, r)).collect()
        })
        .collect();
    TabularMdp::new(n_states, n_actions, rows, &[], discount)
}

/// `2 gamma M epsilon / (1 - gamma)`.
pub fn perturbation_bound(gamma: f64, span: f64, epsilon: f64) -> Result<f64, EpsError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(EpsError::Discount(gamma));
    }
    Ok(2.0 * gamma * span * epsilon / (1.0 - gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    pub schedule: LearningRateSchedule,
    /// Exploration rate of the epsilon-greedy behaviour policy.
    pub explore: f64,
    pub steps: usize,
    /// Share of the run, at the end, over which the gap is maximised.
    pub tail_fraction: f64,
    pub seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            schedule: LearningRateSchedule::RobbinsMonro { c: 10.0, offset: 9.0 },
            explore: 0.2,
            steps: 1_000_000,
            tail_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub epsilon: f64,
    pub gamma: f64,
    /// Span `M` of `Q*` on the base MDP.
    pub span: f64,
    pub bound: f64,
    /// Largest `||Q_t - Q*||` over the tail window.
    pub measured_gap: f64,
    pub satisfied: bool,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "epsilon,gamma,M,bound,measured_gap,satisfied";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.epsilon, self.gamma, self.span, self.bound, self.measured_gap, self.satisfied)
    }
}

/// Runs Q-learning in `em` and compares the tail gap to `Q*` of the base
/// MDP against [`perturbation_bound`].
pub fn run_bound_experiment(em: &mut EpsMdp, config: &BoundConfig) -> Result<BoundReport, EpsError> {
    config.schedule.validate().map_err(|e| EpsError::Argument(e.to_string()))?;
    if config.steps == 0 || !(config.tail_fraction > 0.0 && config.tail_fraction <= 1.0) {
        return Err(EpsError::Argument("need steps >= 1 and tail_fraction in (0, 1]".into()));
    }
    let mut warnings = Vec::new();
    if !config.schedule.is_robbins_monro() {
        warnings.push("constant learning rate: the bound's step-size hypotheses do not hold".to_string());
    }
    if config.explore <= 0.0 {
        warnings.push("no exploration: pairs may not be visited infinitely often".to_string());
    }
    let base = em.base().clone();
    let gamma = base.discount();
    let (_, q_star) = solver::solve(&base)?;
    let span = q_star.span();
    let bound = perturbation_bound(gamma, span, em.epsilon())?;

    let mut learner = QLearner::new(
        base.n_states(),
        base.n_actions(),
        QLearningConfig { discount: gamma, schedule: config.schedule, eps: config.explore },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tail_start = config.steps - ((config.steps as f64 * config.tail_fraction).ceil() as usize).min(config.steps);
    let mut measured_gap: f64 = 0.0;
    let mut x = StateId(0);
    for step in 0..config.steps {
        let a = epsilon_greedy_action(learner.q(), x, config.explore, &mut rng)?;
        let t = em.eps_sample_transition(x, a, &mut rng)?;
        learner.q_learning_step(&t);
        x = if t.done { StateId(0) } else { t.next_state };
        if step >= tail_start {
            measured_gap = measured_gap.max(learner.q().max_abs_diff(&q_star));
        }
    }
    Ok(BoundReport {
        epsilon: em.epsilon(),
        gamma,
        span,
        bound,
        measured_gap,
        satisfied: measured_gap <= bound,
        warnings,
    })
}

/// `||V_hat - V*||_inf`.
pub fn planning_gap(v_hat: &PlanningValueTable, v_star: &ValueTable) -> f64 {
    crate::mdp::max_abs_diff(v_hat.as_slice(), v_star.as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningGapReport {
    pub kappa: f64,
    pub gap: f64,
    /// `gap / (1 - kappa)`, for `kappa < 1`.
    pub implied_constant: Option<f64>,
    /// Set when `kappa = 1` and the gap exceeds [`PLANNING_GAP_TOLERANCE`].
    pub violation: bool,
}

impl PlanningGapReport {
    pub const CSV_HEADER: &'static str = "kappa,gap,implied_constant,violation";

    pub fn csv_row(&self) -> String {
        let c = self.implied_constant.map_or_else(String::new, |c| c.to_string());
        format!("{},{},{},{}", self.kappa, self.gap, c, self.violation)
    }
}

/// Installs the true transition probabilities into a `kappa` model, takes
/// `Q*` as the basic values and runs planning backups to their fixpoint.
pub fn planning_gap_experiment(mdp: &TabularMdp, phi: &InverseDynamics, kappa: f64) -> Result<PlanningGapReport, EpsError> {
    let (v_star, q_star) = solver::solve(mdp)?;
    let config = ModelConfig { kappa, schedule: LearningRateSchedule::Constant { alpha: 0.0 }, init: ModelInit::Pessimistic };
    let mut model = PlannableModel::new(phi, &mdp.terminal_states(), config)?;
    model.install_exact(mdp)?;
    let mut v_hat = PlanningValueTable::new(&q_star, mdp.discount())?;
    planning_fixpoint(&model, &mut v_hat, &q_star, 1e-10, 1_000_000)?;
    let gap = planning_gap(&v_hat, &v_star);
    Ok(PlanningGapReport {
        kappa,
        gap,
        implied_constant: (kappa < 1.0).then(|| gap / (1.0 - kappa)),
        violation: kappa >= 1.0 && gap > PLANNING_GAP_TOLERANCE,
    })
}
