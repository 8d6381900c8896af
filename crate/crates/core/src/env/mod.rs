//! Seeded, cloneable, interveneable simulators.

mod gene;
mod grid;

use std::sync::Arc;

use thiserror::Error;

use crate::gtl::{Formula, Frame, Graph, GraphTrajectory, GtlError, Schema};
use crate::rng::Rng;

pub use gene::{GeneAction, GeneEnv, GeneParams};
pub use grid::{GridAction, GridEnv, GridParams, Line, IEEE14_DATA};

pub type Action = usize;

/// A perturbable or forceable state variable: a node feature of the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateVar {
    pub node: usize,
    pub feature: usize,
}

/// A concrete do-intervention: state overrides applied right after restoring
/// the initial state, then the full action script to roll out.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub state_overrides: Vec<(StateVar, f64)>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is over (t = {0})")]
    EpisodeOver(usize),
    #[error("invalid action {action} (action count {count})")]
    InvalidAction { action: Action, count: usize },
    #[error("variable {0:?} cannot be forced")]
    NotForceable(StateVar),
    #[error("cause cannot be forced: {0}")]
    Unforceable(String),
    #[error("trajectory does not match this environment: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Gtl(#[from] GtlError),
}

/// Uniform interface over the simulators.
///
/// Actions taken at step `t` are recorded in the frame at `t + 1` (the frame
/// `step` returns).
pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn graph(&self) -> &Arc<Graph>;
    fn schema(&self) -> &Arc<Schema>;
    fn reset(&mut self, seed: u64) -> Frame;
    fn step(&mut self, action: Action) -> Result<Frame, EnvError>;
    fn clone_box(&self) -> Box<dyn Environment>;
    /// do-operator hook: overwrite a variable of the current state.
    fn force(&mut self, var: StateVar, value: f64) -> Result<(), EnvError>;
    /// Replace the state by frame 0 of `traj` and clear the history.
    fn restore_initial(&mut self, traj: &GraphTrajectory) -> Result<(), EnvError>;
    fn observation(&self) -> Frame;
    fn trajectory(&self) -> GraphTrajectory;
    fn time(&self) -> usize;
    fn episode_length(&self) -> usize;
    fn action_count(&self) -> usize;
    fn perturbable_variables(&self) -> Vec<StateVar>;
    /// Raw environment reward of the last transition (used by the baselines).
    fn raw_reward(&self) -> f64;
    /// The control goal checked on the simulator's own state, without any
    /// formula evaluation. Matches the default effect formula of each
    /// environment on unperturbed episodes.
    fn goal_reached(&self) -> bool;
    /// Cause-to-assignment map for `do(cause)` (or `do(!cause)` when `negate`).
    fn plan_intervention(
        &self,
        cause: &Formula,
        negate: bool,
        base: &GraphTrajectory,
        base_actions: &[Action],
        rng: &mut Rng,
    ) -> Result<Intervention, EnvError>;

    fn is_done(&self) -> bool {
        self.time() >= self.episode_length()
    }
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Trajectory accumulated by `env` so far.
pub fn build_graph_trajectory(env: &dyn Environment) -> GraphTrajectory {
    env.trajectory()
}

/// Stable 64-bit fingerprint of a trajectory (FNV-1a over the exact bits).
pub fn trajectory_hash(traj: &GraphTrajectory) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(traj.frame_count() as u64);
    for t in 0..traj.frame_count() {
        let f = traj.frame(t);
        for v in f.nodes.iter().chain(&f.edges) {
            feed(v.to_bits());
        }
    }
    h
}

pub(crate) fn check_same_layout(
    graph: &Graph,
    schema: &Schema,
    traj: &GraphTrajectory,
) -> Result<(), EnvError> {
    if traj.is_empty() {
        return Err(EnvError::Mismatch("empty trajectory".into()));
    }
    if **traj.graph() != *graph {
        return Err(EnvError::Mismatch("graph differs".into()));
    }
    if **traj.schema() != *schema {
        return Err(EnvError::Mismatch("feature schema differs".into()));
    }
    Ok(())
}
