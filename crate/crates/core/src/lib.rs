//! Average-reward policy-gradient control of an M/M/1 queue whose service
//! rate is chosen at every service start.
//!
//! - [`sim`]: the event-driven queue and its observations
//! - [`nn`]: small tanh MLPs with hand-written backpropagation
//! - [`agents`]: differential REINFORCE, A2C and PPO
//! - [`dp`]: relative value iteration and birth-death oracles for the optimum
//! - [`metrics`]: `U_η`, `N_η`, `Q_π` and queue-length pseudo-regret
//! - [`harness`]: configuration, trials, the seed grid and CSV reports

pub mod agents;
pub mod dp;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sim;
