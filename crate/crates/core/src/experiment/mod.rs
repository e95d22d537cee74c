//! Batch experiments over `(kappa, seed)` cells: learning curves,
//! final-performance sweeps, bound checks, and their config file.

pub mod checkpoint;

use crate::agent::{Agent, AgentConfig, Algorithm, EpisodeEnd};
use crate::eps_mdp::{random_mdp, run_bound_experiment, BoundConfig, BoundReport, EpsError, EpsMdp};
use crate::gridworld::{compile_mdp, generate_maze, inverse_dynamics, load_maze, MazeConfig, MazeError, MazeSpec};
use crate::learners::LearningRateSchedule;
use crate::mdp::{MdpError, TabularMdp};
use crate::planner::{InverseDynamics, ModelInit, PlannerError};
use crate::solver::SolverError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Eps(#[from] EpsError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelInitChoice {
    /// Pessimistic at `kappa = 1`, optimistic otherwise.
    #[default]
    Auto,
    Optimistic,
    Pessimistic,
}

impl ModelInitChoice {
    pub fn resolve(self, kappa: f64) -> ModelInit {
        match self {
            ModelInitChoice::Auto if kappa >= 1.0 => ModelInit::Pessimistic,
            ModelInitChoice::Auto | ModelInitChoice::Optimistic => ModelInit::Optimistic,
            ModelInitChoice::Pessimistic => ModelInit::Pessimistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsBoundSettings {
    pub epsilons: Vec<f64>,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub steps: usize,
    pub tail_fraction: f64,
    pub explore: f64,
    pub schedule: LearningRateSchedule,
    /// Seed of the random base MDP; run seeds come from `seeds`.
    pub mdp_seed: u64,
}

impl Default for EpsBoundSettings {
    fn default() -> Self {
        let b = BoundConfig::default();
        EpsBoundSettings {
            epsilons: vec![0.0, 0.05, 0.1],
            n_states: 5,
            n_actions: 2,
            gamma: 0.9,
            steps: b.steps,
            tail_fraction: b.tail_fraction,
            explore: b.explore,
            schedule: b.schedule,
            mdp_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub kappas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub gamma: f64,
    /// Defaults to `gamma`.
    pub gamma_plan: Option<f64>,
    pub lambda: f64,
    pub eps: f64,
    pub schedule: LearningRateSchedule,
    /// Defaults to `schedule`.
    pub model_schedule: Option<LearningRateSchedule>,
    pub model_init: ModelInitChoice,
    pub node_budget: usize,
    pub n_episodes: usize,
    pub train_episodes: usize,
    pub max_steps_per_episode: usize,
    pub eval_trials: usize,
    pub curve_window: usize,
    /// Maze text file used instead of generating one from `maze`.
    pub maze_file: Option<PathBuf>,
    pub maze: MazeConfig,
    pub eps_bound: EpsBoundSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let a = AgentConfig::default();
        ExperimentConfig {
            algorithm: Algorithm::Prl,
            kappas: vec![0.05, 0.15, 0.5, 0.7, 0.9, 0.95, 1.0],
            seeds: vec![0],
            gamma: a.discount,
            gamma_plan: None,
            lambda: a.lambda,
            eps: a.eps,
            schedule: a.schedule,
            model_schedule: None,
            model_init: ModelInitChoice::Auto,
            node_budget: a.node_budget,
            n_episodes: 5000,
            train_episodes: 5000,
            max_steps_per_episode: a.max_steps_per_episode,
            eval_trials: 10_000,
            curve_window: 500,
            maze_file: None,
            maze: MazeConfig::default(),
            eps_bound: EpsBoundSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// 10x10 maze, 2000 trials, 10 seeds.
    pub fn desk() -> Self {
        ExperimentConfig {
            kappas: vec![0.15, 0.95, 1.0],
            seeds: (0..10).collect(),
            schedule: LearningRateSchedule::Constant { alpha: 0.1 },
            n_episodes: 2000,
            train_episodes: 2000,
            max_steps_per_episode: 2000,
            curve_window: 50,
            maze: MazeConfig::desk(),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Layers the file over the defaults or, with `desk`, the desk preset.
    pub fn from_toml_over(text: &str, desk: bool) -> Result<Self, ExperimentError> {
        if !desk {
            return Self::from_toml(text);
        }
        let mut base = toml::Table::try_from(Self::desk()).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let over: toml::Table = text.parse().map_err(|e: toml::de::Error| ExperimentError::Config(e.message().to_string()))?;
        merge(&mut base, over);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, desk: bool) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_over(&text, desk)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.kappas.is_empty() || self.kappas.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return fail("kappas must be non-empty and lie in (0, 1]");
        }
        if self.seeds.is_empty() {
            return fail("seeds must be non-empty");
        }
        if (1..self.seeds.len()).any(|i| self.seeds[..i].contains(&self.seeds[i])) {
            return fail("seeds must be distinct");
        }
        if self.curve_window == 0 {
            return fail("curve_window must be at least 1");
        }
        if self.max_steps_per_episode == 0 {
            return fail("max_steps_per_episode must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gamma) || self.gamma_plan.is_some_and(|g| !(0.0..1.0).contains(&g)) {
            return fail("discounts must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.eps) {
            return fail("lambda and eps must lie in [0, 1]");
        }
        for s in std::iter::once(&self.schedule).chain(self.model_schedule.as_ref()) {
            s.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        self.maze.validate()?;
        let b = &self.eps_bound;
        if b.epsilons.iter().any(|e| !(0.0..=2.0).contains(e)) {
            return fail("eps_bound.epsilons must lie in [0, 2]");
        }
        b.schedule.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn agent_config(&self, kappa: f64) -> AgentConfig {
        AgentConfig {
            algorithm: self.algorithm,
            discount: self.gamma,
            gamma_plan: self.gamma_plan.unwrap_or(self.gamma),
            lambda: self.lambda,
            eps: self.eps,
            schedule: self.schedule,
            model_schedule: self.model_schedule.unwrap_or(self.schedule),
            kappa,
            node_budget: self.node_budget,
            model_init: self.model_init.resolve(kappa),
            max_steps_per_episode: self.max_steps_per_episode,
        }
    }

    /// The kappa values a run iterates over; non-planning learners get one.
    pub fn cell_kappas(&self) -> Vec<Option<f64>> {
        match self.algorithm {
            Algorithm::Prl => self.kappas.iter().map(|&k| Some(k)).collect(),
            _ => vec![None],
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Maze, compiled MDP and inverse dynamics for one experiment.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub maze: MazeSpec,
    pub mdp: TabularMdp,
    pub phi: InverseDynamics,
}

impl MazeEnv {
    pub fn new(maze: MazeSpec, discount: f64) -> Result<Self, ExperimentError> {
        let mdp = compile_mdp(&maze, discount)?;
        let phi = inverse_dynamics(&maze)?;
        Ok(MazeEnv { maze, mdp, phi })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let maze = match &cfg.maze_file {
            Some(p) => load_maze(p)?,
            None => generate_maze(&cfg.maze)?,
        };
        Self::new(maze, cfg.gamma)
    }

    pub fn agent(&self, config: &AgentConfig) -> Result<Agent, ExperimentError> {
        let phi = (config.algorithm == Algorithm::Prl).then_some(&self.phi);
        Ok(Agent::new(
            self.mdp.n_states(),
            self.mdp.n_actions(),
            self.maze.start(),
            phi,
            &self.mdp.terminal_states(),
            config,
        )?)
    }
}

/// A trained agent together with its per-episode record and RNG.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub agent: Agent,
    pub episodes: Vec<EpisodeEnd>,
    pub rng: ChaCha8Rng,
}

pub fn train_cell(
    env: &MazeEnv,
    config: &AgentConfig,
    seed: u64,
    n_episodes: usize,
) -> Result<TrainedCell, ExperimentError> {
    let mut agent = env.agent(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mdp = env.mdp.clone();
    let episodes = (0..n_episodes).map(|_| agent.run_episode(&mut mdp, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    Ok(TrainedCell { agent, episodes, rng })
}

/// CSV with one row per training episode.
pub fn episodes_csv(episodes: &[EpisodeEnd]) -> String {
    let mut out = String::from("episode,steps,truncated\n");
    for (i, e) in episodes.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", i + 1, e.steps, e.truncated);
    }
    out
}

/// Trailing mean of `xs` over at most `window` entries.
pub fn trailing_mean(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    pub smoothed_steps: f64,
    pub truncated: bool,
}

/// Learning curves of one kappa (or one non-planning learner).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub kappa: Option<f64>,
    pub label: String,
    /// Sorted by seed, then trial.
    pub rows: Vec<CurveRow>,
}

fn kappa_label(algorithm: Algorithm, kappa: Option<f64>) -> String {
    match kappa {
        Some(k) if k >= 1.0 => "sarsa".to_string(),
        Some(_) => "prl".to_string(),
        None => algorithm.to_string(),
    }
}

impl CurveSeries {
    pub const CSV_HEADER: &'static str = "trial,seed,steps,smoothed_steps,truncated,label";

    pub fn file_name(&self) -> String {
        match self.kappa {
            Some(k) => format!("curve_kappa_{k}.csv"),
            None => format!("curve_{}.csv", self.label),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.trial, r.seed, r.steps, r.smoothed_steps, r.truncated, self.label);
        }
        out
    }

    /// Smoothed steps per trial, averaged over seeds.
    pub fn mean_smoothed(&self) -> Vec<f64> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count: Vec<usize> = Vec::new();
        for r in &self.rows {
            if sum.len() < r.trial {
                sum.resize(r.trial, 0.0);
                count.resize(r.trial, 0);
            }
            sum[r.trial - 1] += r.smoothed_steps;
            count[r.trial - 1] += 1;
        }
        sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect()
    }
}

fn cells(cfg: &ExperimentConfig) -> Vec<(Option<f64>, u64)> {
    cfg.cell_kappas().into_iter().flat_map(|k| cfg.seeds.iter().map(move |&s| (k, s))).collect()
}

/// Trains every `(kappa, seed)` cell for `n_episodes` and records the
/// steps-to-goal of each trial.
pub fn run_learning_curve(cfg: &ExperimentConfig, env: &MazeEnv) -> Result<Vec<CurveSeries>, ExperimentError> {
    cfg.validate()?;
    let results: Vec<_> = cells(cfg)
        .into_par_iter()
        .map(|(kappa, seed)| {
            let cell = train_cell(env, &cfg.agent_config(kappa.unwrap_or(1.0)), seed, cfg.n_episodes)?;
            let steps: Vec<f64> = cell.episodes.iter().map(|e| e.steps as f64).collect();
            let smooth = trailing_mean(&steps, cfg.curve_window);
            let rows = cell
                .episodes
                .iter()
                .zip(smooth)
                .enumerate()
                .map(|(i, (e, s))| CurveRow { trial: i + 1, seed, steps: e.steps, smoothed_steps: s, truncated: e.truncated })
                .collect::<Vec<_>>();
            Ok::<_, ExperimentError>((kappa, rows))
        })
        .collect::<Result<_, _>>()?;
    let mut series: Vec<CurveSeries> = Vec::new();
    for (kappa, rows) in results {
        match series.iter_mut().find(|s| s.kappa == kappa) {
            Some(s) => s.rows.extend(rows),
            None => series.push(CurveSeries { kappa, label: kappa_label(cfg.algorithm, kappa), rows }),
        }
    }
    for s in &mut series {
        s.rows.sort_by_key(|r| (r.seed, r.trial));
    }
    series.sort_by(|a, b| a.kappa.partial_cmp(&b.kappa).expect("kappas are finite"));
    Ok(series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kappa: Option<f64>,
    pub label: String,
    pub mean_steps: f64,
    pub std_err: f64,
    pub n_trials: usize,
    /// Evaluation episodes cut at `max_steps_per_episode`.
    pub truncated: usize,
}

pub const SWEEP_CSV_HEADER: &str = "kappa,mean_steps,std_err,n_trials,truncated,label";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let k = self.kappa.map_or_else(|| "-".to_string(), |k| k.to_string());
        format!("{k},{},{},{},{},{}", self.mean_steps, self.std_err, self.n_trials, self.truncated, self.label)
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluation episodes given to `seed`; `eval_trials` is split over the
/// seeds, earlier seeds taking the remainder.
fn eval_share(cfg: &ExperimentConfig, seed: u64) -> usize {
    let n = cfg.seeds.len();
    let i = cfg.seeds.iter().position(|&s| s == seed).expect("seed from config");
    cfg.eval_trials / n + usize::from(i < cfg.eval_trials % n)
}

/// Trains each cell for `train_episodes`, then runs the greedy policy for
/// `eval_trials` episodes in total with learning and exploration off.
pub fn run_performance_sweep(cfg: &ExperimentConfig, env: &MazeEnv) -> Result<Vec<SweepRow>, ExperimentError> {
    cfg.validate()?;
    let results: Vec<_> = cells(cfg)
        .into_par_iter()
        .map(|(kappa, seed)| {
            let mut cell = train_cell(env, &cfg.agent_config(kappa.unwrap_or(1.0)), seed, cfg.train_episodes)?;
            let mut mdp = env.mdp.clone();
            let evals = (0..eval_share(cfg, seed))
                .map(|_| cell.agent.evaluate_episode(&mut mdp, &mut cell.rng, cfg.max_steps_per_episode))
                .collect::<Result<Vec<_>, _>>()?;
            Ok::<_, ExperimentError>((kappa, seed, evals))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for kappa in cfg.cell_kappas() {
        let mut group: Vec<_> = results.iter().filter(|(k, _, _)| *k == kappa).collect();
        group.sort_by_key(|(_, s, _)| *s);
        let steps: Vec<f64> = group.iter().flat_map(|(_, _, e)| e.iter().map(|x| x.steps as f64)).collect();
        let truncated = group.iter().flat_map(|(_, _, e)| e.iter()).filter(|x| x.truncated).count();
        let (mean_steps, std_err) = mean_and_stderr(&steps);
        rows.push(SweepRow {
            kappa,
            label: kappa_label(cfg.algorithm, kappa),
            mean_steps,
            std_err,
            n_trials: steps.len(),
            truncated,
        });
    }
    rows.sort_by(|a, b| a.kappa.partial_cmp(&b.kappa).expect("kappas are finite"));
    Ok(rows)
}

/// Runs the bound check for every `(epsilon, seed)` pair, ordered by
/// epsilon then seed.
pub fn run_eps_bound(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>, ExperimentError> {
    cfg.validate()?;
    let b = &cfg.eps_bound;
    let base = random_mdp(b.n_states, b.n_actions, b.gamma, &mut ChaCha8Rng::seed_from_u64(b.mdp_seed))?;
    let pairs: Vec<(f64, u64)> = b.epsilons.iter().flat_map(|&e| cfg.seeds.iter().map(move |&s| (e, s))).collect();
    pairs
        .into_par_iter()
        .map(|(epsilon, seed)| {
            let mut em = EpsMdp::new(base.clone(), epsilon, seed)?;
            let bc = BoundConfig {
                schedule: b.schedule,
                explore: b.explore,
                steps: b.steps,
                tail_fraction: b.tail_fraction,
                seed,
            };
            Ok(run_bound_experiment(&mut em, &bc)?)
        })
        .collect()
}

pub fn bound_csv(reports: &[BoundReport]) -> String {
    let mut out = format!("{}\n", BoundReport::CSV_HEADER);
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
