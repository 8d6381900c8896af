//! Counterexample buffer, perturbation-based counterexample synthesis and
//! counterfactual rollouts under a forced (or negated) cause.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::causal::CausalSpec;
use crate::env::{Action, EnvError, Environment, StateVar};
use crate::gtl::io::{parse_trace_file, write_trace_file, TraceFile};
use crate::gtl::{GraphTrajectory, GtlError};
use crate::par::{self, ExecMode};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum CounterexampleError {
    #[error("trace satisfies the effect (robustness {0}); only violations are stored")]
    NotViolating(f64),
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
    #[error("perturbation range must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("perturbation step {step} is outside the episode (length {length})")]
    BadStep { step: usize, length: usize },
    #[error("forcing did not reach the requested cause value (robustness {})", .0.cause_robustness)]
    ForcingFailed(Box<Counterfactual>),
    #[error("unknown provenance tag `{0}`")]
    Provenance(String),
    #[error("dump has no {0} line")]
    MissingHeader(&'static str),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gtl(#[from] GtlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    EpisodeViolation,
    PerturbationSynthesized,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::EpisodeViolation => "episode-violation",
            Provenance::PerturbationSynthesized => "perturbation-synthesized",
        })
    }
}

impl FromStr for Provenance {
    type Err = CounterexampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "episode-violation" => Ok(Provenance::EpisodeViolation),
            "perturbation-synthesized" => Ok(Provenance::PerturbationSynthesized),
            other => Err(CounterexampleError::Provenance(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrace {
    pub trajectory: GraphTrajectory,
    pub actions: Vec<Action>,
    pub provenance: Provenance,
    pub effect_robustness: f64,
}

/// Bounded FIFO of effect-violating traces.
#[derive(Debug, Clone)]
pub struct CounterexampleBuffer {
    capacity: usize,
    traces: VecDeque<StoredTrace>,
    total_inserted: usize,
}

impl CounterexampleBuffer {
    pub fn new(capacity: usize) -> Result<Self, CounterexampleError> {
        if capacity == 0 {
            return Err(CounterexampleError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            traces: VecDeque::with_capacity(capacity.min(1024)),
            total_inserted: 0,
        })
    }

    /// Rejects traces that satisfy the effect; evicts the oldest when full.
    pub fn insert(&mut self, trace: StoredTrace) -> Result<(), CounterexampleError> {
        if !(trace.effect_robustness <= 0.0) {
            return Err(CounterexampleError::NotViolating(trace.effect_robustness));
        }
        if self.traces.len() == self.capacity {
            self.traces.pop_front();
        }
        self.traces.push_back(trace);
        self.total_inserted += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_inserted(&self) -> usize {
        self.total_inserted
    }

    pub fn get(&self, i: usize) -> Option<&StoredTrace> {
        self.traces.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredTrace> {
        self.traces.iter()
    }
}

/// Cause holds and effect fails, both at t = 0.
pub fn is_valid_counterexample(
    traj: &GraphTrajectory,
    spec: &CausalSpec,
) -> Result<bool, GtlError> {
    Ok(spec.cause_robustness(traj)? > 0.0 && spec.effect_robustness(traj)? <= 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationOutcome {
    pub attempted: usize,
    pub kept: Vec<StoredTrace>,
}

/// Replay `actions[..step]` from the initial state of `base`, then for every
/// perturbable variable and offset in `{-epsilon, +epsilon}` roll out with
/// `actions[step]` held for the rest of the episode. Only rollouts that keep
/// the cause and break the effect are returned. Nothing is attempted when
/// the base trajectory satisfies the effect.
pub fn generate_counterexamples(
    env: &dyn Environment,
    base: &GraphTrajectory,
    actions: &[Action],
    step: usize,
    spec: &CausalSpec,
    epsilon: f64,
    mode: ExecMode,
) -> Result<PerturbationOutcome, CounterexampleError> {
    if !(epsilon > 0.0) {
        return Err(CounterexampleError::BadEpsilon(epsilon));
    }
    if spec.effect_robustness(base)? > 0.0 {
        return Ok(PerturbationOutcome {
            attempted: 0,
            kept: Vec::new(),
        });
    }
    let length = env.episode_length();
    if step >= length {
        return Err(CounterexampleError::BadStep { step, length });
    }
    let mut sim = env.clone_box();
    sim.restore_initial(base)?;
    for &a in actions.iter().take(step) {
        sim.step(a)?;
    }
    let frozen = actions.get(step).copied().unwrap_or(0);
    let width = sim.schema().node_features.len();
    let current = sim.observation();
    let jobs: Vec<(StateVar, f64)> = sim
        .perturbable_variables()
        .into_iter()
        .flat_map(|v| [(v, -epsilon), (v, epsilon)])
        .collect();

    let results = par::map(
        mode,
        &jobs,
        |&(var, delta)| -> Result<Option<StoredTrace>, CounterexampleError> {
            let mut branch = sim.clone_box();
            let value = current.nodes[var.node * width + var.feature];
            branch.force(var, value + delta)?;
            let mut taken: Vec<Action> = actions[..step.min(actions.len())].to_vec();
            while !branch.is_done() {
                branch.step(frozen)?;
                taken.push(frozen);
            }
            let traj = branch.trajectory();
            if !is_valid_counterexample(&traj, spec)? {
                return Ok(None);
            }
            Ok(Some(StoredTrace {
                effect_robustness: spec.effect_robustness(&traj)?,
                trajectory: traj,
                actions: taken,
                provenance: Provenance::PerturbationSynthesized,
            }))
        },
    );
    let mut kept = Vec::new();
    for r in results {
        if let Some(t) = r? {
            kept.push(t);
        }
    }
    Ok(PerturbationOutcome {
        attempted: jobs.len(),
        kept,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub trajectory: GraphTrajectory,
    pub actions: Vec<Action>,
    pub cause_robustness: f64,
    pub effect_robustness: f64,
    pub negated: bool,
}

/// Roll out `base` again with the cause forced (or negated when `negate`).
/// A rollout whose cause robustness ends on the wrong side of zero is
/// returned inside [`CounterexampleError::ForcingFailed`].
pub fn generate_counterfactual(
    env: &dyn Environment,
    base: &GraphTrajectory,
    base_actions: &[Action],
    spec: &CausalSpec,
    negate: bool,
    rng: &mut Rng,
) -> Result<Counterfactual, CounterexampleError> {
    let plan = env.plan_intervention(spec.cause(), negate, base, base_actions, rng)?;
    let mut sim = env.clone_box();
    sim.restore_initial(base)?;
    for &(var, value) in &plan.state_overrides {
        sim.force(var, value)?;
    }
    let mut actions = Vec::with_capacity(sim.episode_length());
    let mut script = plan.actions.iter().copied();
    while !sim.is_done() {
        let a = script.next().unwrap_or(0);
        sim.step(a)?;
        actions.push(a);
    }
    let trajectory = sim.trajectory();
    let cf = Counterfactual {
        cause_robustness: spec.cause_robustness(&trajectory)?,
        effect_robustness: spec.effect_robustness(&trajectory)?,
        trajectory,
        actions,
        negated: negate,
    };
    let reached = if negate {
        cf.cause_robustness < 0.0
    } else {
        cf.cause_robustness > 0.0
    };
    if reached {
        Ok(cf)
    } else {
        Err(CounterexampleError::ForcingFailed(Box::new(cf)))
    }
}

/// Trace text with `provenance` and `actions` header lines.
pub fn write_counterexample(trace: &StoredTrace) -> String {
    write_trace_file(&TraceFile {
        provenance: Some(trace.provenance.to_string()),
        actions: Some(trace.actions.clone()),
        trajectory: trace.trajectory.clone(),
    })
}

/// Parse a dump; the effect robustness is recomputed against `spec`.
pub fn read_counterexample(
    text: &str,
    spec: &CausalSpec,
) -> Result<StoredTrace, CounterexampleError> {
    let file = parse_trace_file(text)?;
    let provenance = file
        .provenance
        .ok_or(CounterexampleError::MissingHeader("provenance"))?
        .parse()?;
    let actions = file
        .actions
        .ok_or(CounterexampleError::MissingHeader("actions"))?;
    Ok(StoredTrace {
        effect_robustness: spec.effect_robustness(&file.trajectory)?,
        trajectory: file.trajectory,
        actions,
        provenance,
    })
}
