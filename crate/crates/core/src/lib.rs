//! Tabular reinforcement learning with a plannable-transition model.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: finite MDPs, policies, value tables, policy evaluation
//! * [`solver`]: exact value iteration, used as ground truth
//! * [`learners`]: SARSA(lambda) and Q-learning on the basic action values
//! * [`planner`]: the thresholded transition model, planning sweeps,
//!   action-selection switching and macro extraction
//! * [`gridworld`]: the seeded stochastic maze family
//! * [`eps_mdp`]: perturbed environments and near-optimality bound checks
//! * [`agent`]: the full learn / model / plan step loop
//! * [`experiment`]: config files, learning curves, sweeps and checkpoints

pub mod agent;
pub mod eps_mdp;
pub mod experiment;
pub mod gridworld;
pub mod learners;
pub mod mdp;
pub mod planner;
pub mod solver;

pub use mdp::{ActionId, ActionValueTable, Policy, StateId, TabularMdp, Transition, ValueTable};
