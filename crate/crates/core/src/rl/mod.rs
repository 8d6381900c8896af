//! Tabular Q-learning over sliding-window states with robustness-shaped rewards.

mod checkpoint;
mod table;
mod window;

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvError, Environment};
use crate::gtl::{Formula, Graph, GraphTrajectory, GtlError, Monitor, Schema};
use crate::rng::Rng;

pub use checkpoint::{parse_checkpoint, write_checkpoint};
pub use table::{QTable, StateKey};
pub use window::TauState;

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Gtl(#[from] GtlError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("window holds {have} frames but the formula needs {needed}")]
    ShortWindow { needed: usize, have: usize },
    #[error("episode aborted at t = {}: {source}", partial.horizon())]
    Step {
        partial: Box<GraphTrajectory>,
        source: EnvError,
    },
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Eventually,
    Always,
}

impl RewardMode {
    /// Always-rooted formulas get the penalty form, everything else the bonus form.
    pub fn for_formula(f: &Formula) -> Self {
        match f {
            Formula::Always { .. } => RewardMode::Always,
            _ => RewardMode::Eventually,
        }
    }

    pub fn shape(self, rho: f64, beta: f64) -> f64 {
        match self {
            RewardMode::Eventually => (beta * rho).exp(),
            RewardMode::Always => -(-beta * rho).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            decay: 0.995,
            floor: 0.05,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        (self.start * self.decay.powi(episode.min(i32::MAX as usize) as i32)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: EpsilonSchedule,
    /// Use the decaying step size `1 / (1 + visits)` instead of `alpha`.
    pub robbins_monro: bool,
    /// Quantization step for state keys.
    pub resolution: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            beta: 5.0,
            epsilon: EpsilonSchedule::default(),
            robbins_monro: false,
            resolution: 0.01,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.beta <= 0.0 {
            return bad("beta must be positive");
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.floor) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if !(e.decay > 0.0 && e.decay <= 1.0) {
            return bad("epsilon decay must lie in (0, 1]");
        }
        if self.resolution <= 0.0 {
            return bad("resolution must be positive");
        }
        Ok(())
    }
}

/// Shaped reward of `phi` over a window read as a trajectory from
/// its first frame (the best node counts).
pub fn robustness_reward(
    window: &GraphTrajectory,
    phi: &Formula,
    mode: RewardMode,
    beta: f64,
) -> Result<f64, RlError> {
    let monitor = Monitor::new(phi, window.schema())?;
    window_reward(window, &monitor, mode, beta)
}

fn window_reward(
    window: &GraphTrajectory,
    monitor: &Monitor,
    mode: RewardMode,
    beta: f64,
) -> Result<f64, RlError> {
    if window.frame_count() < monitor.horizon() + 1 {
        return Err(RlError::ShortWindow {
            needed: monitor.horizon() + 1,
            have: window.frame_count(),
        });
    }
    Ok(mode.shape(monitor.any_node(window, 0)?, beta))
}

/// Q(s,a) <- Q(s,a) + alpha (r + gamma max_a' Q(s',a') - Q(s,a)); a terminal
/// transition passes `None` for the next state. Returns the new value.
pub fn q_update(
    table: &mut QTable,
    s: StateKey,
    a: Action,
    r: f64,
    s_next: Option<StateKey>,
    cfg: &RlConfig,
) -> f64 {
    let future = s_next.map_or(0.0, |k| table.max_value(k));
    let visits = table.visits(s, a);
    let alpha = if cfg.robbins_monro {
        1.0 / (1.0 + visits as f64)
    } else {
        cfg.alpha
    };
    let old = table.value(s, a);
    let new = old + alpha * (r + cfg.gamma * future - old);
    table.set(s, a, new);
    new
}

/// Epsilon-greedy choice; greedy ties go to the lowest action id.
pub fn select_action(table: &QTable, s: StateKey, epsilon: f64, rng: &mut Rng) -> Action {
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        rng.gen_range(0..table.action_count())
    } else {
        table.greedy(s)
    }
}

/// Where per-step rewards come from.
#[derive(Debug, Clone)]
pub enum RewardSource {
    /// Shaped robustness of the effect formula over the current window.
    Robustness { mode: RewardMode, beta: f64 },
    /// The environment's own reward signal.
    Raw,
}

/// Everything an episode needs besides the environment and the table.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    effect: Option<(Formula, Monitor)>,
    reward: RewardSource,
    tau: usize,
    /// After each real step, also learn from one-step hypothetical rollouts
    /// of every other action on a cloned environment.
    pub hypothetical_actions: bool,
}

impl EpisodeSpec {
    pub fn new(effect: &Formula, schema: &Schema, reward: RewardSource) -> Result<Self, RlError> {
        let monitor = Monitor::new(effect, schema)?;
        Ok(Self {
            tau: monitor.horizon() + 1,
            effect: Some((effect.clone(), monitor)),
            reward,
            hypothetical_actions: false,
        })
    }

    /// Robustness-shaped reward with the mode taken from the effect's root.
    pub fn shaped(effect: &Formula, schema: &Schema, beta: f64) -> Result<Self, RlError> {
        let mode = RewardMode::for_formula(effect);
        Self::new(effect, schema, RewardSource::Robustness { mode, beta })
    }

    /// Raw environment reward, single-frame states and no formula at all.
    pub fn unshaped() -> Self {
        Self {
            effect: None,
            reward: RewardSource::Raw,
            tau: 1,
            hypothetical_actions: false,
        }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn effect(&self) -> Option<&Formula> {
        self.effect.as_ref().map(|(f, _)| f)
    }

    pub fn effect_robustness(&self, traj: &GraphTrajectory) -> Result<Option<f64>, RlError> {
        match &self.effect {
            Some((_, m)) => Ok(Some(m.any_node(traj, 0)?)),
            None => Ok(None),
        }
    }

    fn shaped_reward(
        &self,
        window: &TauState,
        graph: &Arc<Graph>,
        schema: &Arc<Schema>,
    ) -> Result<Option<f64>, RlError> {
        match (&self.reward, &self.effect) {
            (RewardSource::Robustness { mode, beta }, Some((_, monitor))) => {
                let traj = window.to_trajectory(graph, schema)?;
                window_reward(&traj, monitor, *mode, *beta).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn reward_after(&self, env: &dyn Environment, window: &TauState) -> Result<f64, RlError> {
        Ok(self
            .shaped_reward(window, env.graph(), env.schema())?
            .unwrap_or_else(|| env.raw_reward()))
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trajectory: GraphTrajectory,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub cumulative_reward: f64,
    /// Absent when the spec carries no effect formula.
    pub effect_robustness: Option<f64>,
    /// The episode violated the effect.
    pub counterexample: bool,
    pub q_updates: usize,
}

/// Reset, act epsilon-greedily for a full episode and learn online.
pub fn run_episode(
    env: &mut dyn Environment,
    table: &mut QTable,
    spec: &EpisodeSpec,
    cfg: &RlConfig,
    epsilon: f64,
    reset_seed: u64,
    rng: &mut Rng,
) -> Result<EpisodeOutcome, RlError> {
    let first = env.reset(reset_seed);
    let mut window = TauState::new(first, spec.tau);
    let mut actions = Vec::with_capacity(env.episode_length());
    let mut rewards = Vec::with_capacity(env.episode_length());
    let mut q_updates = 0;
    while !env.is_done() {
        let s = window.key(cfg.resolution);
        let a = select_action(table, s, epsilon, rng);
        let snapshot = spec.hypothetical_actions.then(|| env.clone_box());
        let frame = match env.step(a) {
            Ok(f) => f,
            Err(source) => {
                return Err(RlError::Step {
                    partial: Box::new(env.trajectory()),
                    source,
                })
            }
        };
        let mut next = window.clone();
        next.push(frame);
        let r = spec.reward_after(env, &next)?;
        let terminal = env.is_done();
        q_update(
            table,
            s,
            a,
            r,
            (!terminal).then(|| next.key(cfg.resolution)),
            cfg,
        );
        q_updates += 1;
        if let Some(snapshot) = snapshot {
            for other in (0..env.action_count()).filter(|&o| o != a) {
                let mut sim = snapshot.clone();
                let frame = sim.step(other)?;
                let mut hyp = window.clone();
                hyp.push(frame);
                let r = spec.reward_after(sim.as_ref(), &hyp)?;
                let next_key = (!sim.is_done()).then(|| hyp.key(cfg.resolution));
                q_update(table, s, other, r, next_key, cfg);
                q_updates += 1;
            }
        }
        actions.push(a);
        rewards.push(r);
        window = next;
    }
    let trajectory = env.trajectory();
    let effect_robustness = spec.effect_robustness(&trajectory)?;
    Ok(EpisodeOutcome {
        cumulative_reward: rewards.iter().sum(),
        trajectory,
        actions,
        rewards,
        effect_robustness,
        counterexample: effect_robustness.is_some_and(|r| r <= 0.0),
        q_updates,
    })
}

/// Learn from a recorded trajectory with shaped rewards. Each sweep visits
/// the transitions last to first so value propagates toward the start.
pub fn replay_trajectory(
    table: &mut QTable,
    traj: &GraphTrajectory,
    actions: &[Action],
    spec: &EpisodeSpec,
    cfg: &RlConfig,
    sweeps: usize,
) -> Result<usize, RlError> {
    if spec.reward.is_raw() || spec.effect.is_none() {
        return Err(RlError::Config(
            "replay needs a reward computable from the trajectory".into(),
        ));
    }
    let steps = traj.horizon().min(actions.len());
    let mut window = TauState::new(traj.frame(0), spec.tau);
    let mut transitions = Vec::with_capacity(steps);
    for (t, &a) in actions.iter().enumerate().take(steps) {
        let s = window.key(cfg.resolution);
        window.push(traj.frame(t + 1));
        let r = spec
            .shaped_reward(&window, traj.graph(), traj.schema())?
            .expect("shaped reward");
        let next = (t + 1 < steps).then(|| window.key(cfg.resolution));
        transitions.push((s, a, r, next));
    }
    for _ in 0..sweeps {
        for &(s, a, r, next) in transitions.iter().rev() {
            q_update(table, s, a, r, next, cfg);
        }
    }
    Ok(transitions.len() * sweeps)
}

impl RewardSource {
    fn is_raw(&self) -> bool {
        matches!(self, RewardSource::Raw)
    }
}
