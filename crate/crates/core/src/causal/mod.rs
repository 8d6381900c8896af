//! Causal specifications `do(cause) ~> effect`, their sufficiency, necessity
//! and existence degrees, and the refinement objective.

mod template;

use std::sync::Arc;

use rand::{Rng as _, SeedableRng};
use thiserror::Error;

use crate::counterexample::{
    generate_counterfactual, CounterexampleBuffer, CounterexampleError, Counterfactual,
};
use crate::env::{EnvError, Environment};
use crate::gtl::{Formula, GraphTrajectory, GtlError, Monitor, Schema};
use crate::par::{self, ExecMode};
use crate::rng::Rng;

pub use template::{CauseTemplate, Slot, SlotKind};

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("template: {0}")]
    Template(String),
    #[error("parameters: {0}")]
    Theta(String),
    #[error("formula horizon {needed} exceeds the episode length {available}")]
    Horizon { needed: usize, available: usize },
    #[error("counterexample buffer is empty")]
    EmptyBuffer,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Gtl(#[from] GtlError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Counterexample(#[from] Box<CounterexampleError>),
}

/// An instantiated cause, a fixed effect and the template the cause came from.
#[derive(Debug, Clone)]
pub struct CausalSpec {
    template: CauseTemplate,
    theta: Vec<f64>,
    cause: Formula,
    effect: Formula,
    cause_monitor: Monitor,
    effect_monitor: Monitor,
    schema: Arc<Schema>,
    episode_length: usize,
}

impl CausalSpec {
    /// Both formulas are checked against the schema and must be decidable
    /// within one episode of `episode_length` steps.
    pub fn new(
        template: CauseTemplate,
        theta: &[f64],
        effect: Formula,
        schema: Arc<Schema>,
        episode_length: usize,
    ) -> Result<Self, CausalError> {
        let effect_monitor = Monitor::new(&effect, &schema)?;
        if effect.horizon() > episode_length {
            return Err(CausalError::Horizon {
                needed: effect.horizon(),
                available: episode_length,
            });
        }
        let cause = template.instantiate(theta)?;
        let cause_monitor = Self::cause_monitor(&cause, &schema, episode_length)?;
        Ok(Self {
            template,
            theta: theta.to_vec(),
            cause,
            effect,
            cause_monitor,
            effect_monitor,
            schema,
            episode_length,
        })
    }

    fn cause_monitor(cause: &Formula, schema: &Schema, len: usize) -> Result<Monitor, CausalError> {
        if cause.horizon() > len {
            return Err(CausalError::Horizon {
                needed: cause.horizon(),
                available: len,
            });
        }
        Ok(Monitor::new(cause, schema)?)
    }

    /// Same effect and template, new parameters.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self, CausalError> {
        let cause = self.template.instantiate(theta)?;
        let cause_monitor = Self::cause_monitor(&cause, &self.schema, self.episode_length)?;
        Ok(Self {
            theta: theta.to_vec(),
            cause,
            cause_monitor,
            ..self.clone()
        })
    }

    pub fn template(&self) -> &CauseTemplate {
        &self.template
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn cause(&self) -> &Formula {
        &self.cause
    }

    pub fn effect(&self) -> &Formula {
        &self.effect
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn episode_length(&self) -> usize {
        self.episode_length
    }

    /// Cause robustness at t = 0, best node.
    pub fn cause_robustness(&self, traj: &GraphTrajectory) -> Result<f64, GtlError> {
        self.cause_monitor.any_node(traj, 0)
    }

    /// Effect robustness at t = 0, best node.
    pub fn effect_robustness(&self, traj: &GraphTrajectory) -> Result<f64, GtlError> {
        self.effect_monitor.any_node(traj, 0)
    }
}

/// A degree together with a flag for an empty partition (value 0 then).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degree {
    pub value: f64,
    pub empty: bool,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    Some(s / xs.len() as f64)
}

fn degree(xs: &[f64], f: impl Fn(f64) -> f64) -> Degree {
    match mean(xs) {
        Some(m) => Degree {
            value: f(m),
            empty: false,
        },
        None => Degree {
            value: 0.0,
            empty: true,
        },
    }
}

/// Mean effect robustness over the traces whose cause robustness is positive.
pub fn sufficiency_degree(
    dataset: &[GraphTrajectory],
    spec: &CausalSpec,
) -> Result<Degree, CausalError> {
    partition_effects(dataset, spec, |c| c > 0.0).map(|xs| degree(&xs, |m| m))
}

/// Negated mean effect robustness over the traces whose cause robustness is negative.
pub fn necessity_degree(
    dataset: &[GraphTrajectory],
    spec: &CausalSpec,
) -> Result<Degree, CausalError> {
    partition_effects(dataset, spec, |c| c < 0.0).map(|xs| degree(&xs, |m| -m))
}

fn partition_effects(
    dataset: &[GraphTrajectory],
    spec: &CausalSpec,
    keep: impl Fn(f64) -> bool,
) -> Result<Vec<f64>, CausalError> {
    if dataset.is_empty() {
        return Err(CausalError::EmptyDataset);
    }
    let mut out = Vec::new();
    for tr in dataset {
        if keep(spec.cause_robustness(tr)?) {
            out.push(spec.effect_robustness(tr)?);
        }
    }
    Ok(out)
}

/// Mean of `exp(-(rho_c(tau) - rho_c(nominal)))` over the dataset.
pub fn existence_degree(
    dataset: &[GraphTrajectory],
    spec: &CausalSpec,
    nominal: &GraphTrajectory,
) -> Result<f64, CausalError> {
    if dataset.is_empty() {
        return Err(CausalError::EmptyDataset);
    }
    let reference = spec.cause_robustness(nominal)?;
    let mut terms = Vec::with_capacity(dataset.len());
    for tr in dataset {
        terms.push((-(spec.cause_robustness(tr)? - reference)).exp());
    }
    Ok(mean(&terms).expect("non-empty"))
}

/// Zero-action rollout from the environment's initial state under `seed`.
pub fn nominal_trajectory(env: &dyn Environment, seed: u64) -> Result<GraphTrajectory, EnvError> {
    let mut sim = env.clone_box();
    sim.reset(seed);
    while !sim.is_done() {
        sim.step(0)?;
    }
    Ok(sim.trajectory())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SneScores {
    pub sufficiency: f64,
    pub necessity: f64,
    pub existence: f64,
    pub sufficiency_empty: bool,
    pub necessity_empty: bool,
    pub existence_empty: bool,
}

impl SneScores {
    /// Scores from the three score lists of one evaluation round.
    pub fn from_lists(sufficiency: &[f64], necessity: &[f64], existence: &[f64]) -> Self {
        let s = degree(sufficiency, |m| m);
        let n = degree(necessity, |m| (-m).exp());
        let e = match mean(existence) {
            Some(m) => Degree {
                value: (-m).exp(),
                empty: false,
            },
            None => Degree {
                value: 1.0,
                empty: true,
            },
        };
        Self {
            sufficiency: s.value,
            necessity: n.value,
            existence: e.value,
            sufficiency_empty: s.empty,
            necessity_empty: n.empty,
            existence_empty: e.empty,
        }
    }
}

/// One evaluation round: scores plus the counterfactuals it generated.
#[derive(Debug, Clone)]
pub struct SneEvaluation {
    pub scores: SneScores,
    /// In sampling order; skipped samples are absent.
    pub counterfactuals: Vec<Counterfactual>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SneConfig {
    pub iterations: usize,
    pub eps_sufficiency: f64,
    pub eps_necessity: f64,
}

impl Default for SneConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            eps_sufficiency: 0.05,
            eps_necessity: 0.05,
        }
    }
}

/// Sample `iterations` traces from the buffer, force the cause on each and
/// score the counterfactuals.
///
/// Sampling protocol, one round per iteration: draw the buffer index, then a
/// `u64` seed for the counterfactual's own stream. Samples whose cause cannot
/// be forced are skipped; forced rollouts that still miss the cause are kept.
pub fn evaluate_sne(
    buffer: &CounterexampleBuffer,
    spec: &CausalSpec,
    env: &dyn Environment,
    cfg: &SneConfig,
    mode: ExecMode,
    rng: &mut Rng,
) -> Result<SneEvaluation, CausalError> {
    if buffer.is_empty() {
        return Err(CausalError::EmptyBuffer);
    }
    if cfg.iterations == 0 {
        return Err(CausalError::NoIterations);
    }
    let draws: Vec<(usize, u64)> = (0..cfg.iterations)
        .map(|_| (rng.gen_range(0..buffer.len()), rng.gen::<u64>()))
        .collect();
    let results = par::map(mode, &draws, |&(idx, seed)| {
        let base = buffer.get(idx).expect("index in range");
        let mut cf_rng = Rng::seed_from_u64(seed);
        generate_counterfactual(
            env,
            &base.trajectory,
            &base.actions,
            spec,
            false,
            &mut cf_rng,
        )
    });

    let mut sufficiency = Vec::new();
    let mut necessity = Vec::new();
    let mut existence = Vec::new();
    let mut counterfactuals = Vec::new();
    let mut skipped = 0;
    for r in results {
        let cf = match r {
            Ok(cf) => cf,
            Err(CounterexampleError::ForcingFailed(cf)) => *cf,
            Err(CounterexampleError::Env(EnvError::Unforceable(_))) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(Box::new(e).into()),
        };
        if cf.cause_robustness > cfg.eps_sufficiency {
            sufficiency.push(cf.effect_robustness);
        }
        if cf.cause_robustness < -cfg.eps_necessity {
            necessity.push(cf.effect_robustness);
        }
        existence.push(cf.cause_robustness);
        counterfactuals.push(cf);
    }
    Ok(SneEvaluation {
        scores: SneScores::from_lists(&sufficiency, &necessity, &existence),
        counterfactuals,
        skipped,
    })
}

/// `-E + lambda_s S + lambda_n N`
pub fn objective_j(scores: &SneScores, lambda_s: f64, lambda_n: f64) -> f64 {
    -scores.existence + lambda_s * scores.sufficiency + lambda_n * scores.necessity
}
