//! Joint tabular Q-learning and causal graph temporal logic mining.
//!
//! The crate is organised bottom-up:
//!
//! * [`gtl`] parses formulas and evaluates their robustness on graph trajectories.
//! * [`causal`] scores parameterised cause templates (sufficiency, necessity, existence).
//! * [`rl`] is tabular Q-learning over sliding windows of observations.
//! * [`gp`] is the RBF Gaussian process with UCB proposals over template parameters.
//! * [`counterexample`] synthesizes effect-violating traces and interventional rollouts.
//! * [`env`] holds the gene-regulation and power-grid simulators.
//! * [`harness`] runs the closed loop and the two baselines and writes results.

pub mod causal;
pub mod counterexample;
pub mod env;
pub mod gp;
pub mod gtl;
pub mod harness;
pub mod par;
pub mod rl;
pub mod rng;
