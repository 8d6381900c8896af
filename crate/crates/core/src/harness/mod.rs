//! Closed-loop training runs, baselines, seed sweeps and result files.

mod config;
mod output;

use std::path::PathBuf;

use thiserror::Error;

use crate::causal::{evaluate_sne, objective_j, CausalError, CausalSpec, SneConfig, SneScores};
use crate::counterexample::{
    generate_counterexamples, CounterexampleBuffer, CounterexampleError, Provenance, StoredTrace,
};
use crate::env::{Environment, GeneEnv, GridEnv};
use crate::gp::{BayesOpt, GpError, OptimizationLog, OptimizationRow};
use crate::par::{self, ExecMode};
use crate::rl::{self, EpisodeSpec, QTable, RlError};
use crate::rng::{derive_seed, stream};

pub use config::{
    CausalConfig, CounterexampleConfig, EffectConfig, EnvConfig, EnvKind, ExperimentConfig, Method,
    RunConfig, TemplateConfig, GENE_DEFAULTS, GRID_DEFAULTS,
};
pub use output::{emit_results, emit_summary, episodes_csv, summarize, summary_csv, SummaryRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Counterexample(#[from] CounterexampleError),
}

/// Counts of the formula-side machinery a run constructed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Instrumentation {
    pub formulas_built: usize,
    pub buffers_built: usize,
    pub gp_models_built: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub success: bool,
    pub cumulative_reward: f64,
    pub effect_robustness: Option<f64>,
    /// Counterexamples added to the buffer during this episode.
    pub counterexamples: usize,
    pub q_updates: usize,
    /// Parameters in force during the episode.
    pub theta: Option<Vec<f64>>,
    pub scores: Option<SneScores>,
    pub j: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
    /// Highest-scoring instantiation of the cause template.
    pub mined_formula: String,
    pub mined_theta: Option<Vec<f64>>,
    /// The last parameter proposal.
    pub final_theta: Option<Vec<f64>>,
    pub qtable: QTable,
    pub optimization: Option<OptimizationLog>,
    pub buffer: Vec<StoredTrace>,
    pub instrumentation: Instrumentation,
    pub success_window: usize,
}

impl RunRecord {
    /// Mean success over the trailing `success_window` episodes.
    pub fn success_rate(&self) -> f64 {
        let n = self.success_window.clamp(1, self.rows.len().max(1));
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|r| r.success).count() as f64 / tail.len() as f64
    }
}

pub fn build_env(cfg: &RunConfig) -> Box<dyn Environment> {
    let seed = env_seed(cfg.experiment.seed);
    match cfg.experiment.env {
        EnvKind::Gene => Box::new(GeneEnv::new(cfg.env.gene.clone(), seed)),
        EnvKind::Grid => Box::new(GridEnv::new(cfg.env.grid.clone(), seed)),
    }
}

/// Seed every episode of a run resets the environment with.
pub fn env_seed(master: u64) -> u64 {
    derive_seed(master, "env")
}

fn exec_mode(cfg: &RunConfig) -> ExecMode {
    if cfg.experiment.parallel {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

/// Run whichever method the configuration selects.
pub fn run(cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    match cfg.experiment.method {
        Method::GtlCirl => run_gtl_cirl(cfg),
        _ => run_baseline(cfg),
    }
}

pub fn run_gtl_cirl(cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let mode = exec_mode(cfg);
    let mut counters = Instrumentation::default();
    let mut env = build_env(cfg);
    let reset_seed = env_seed(seed);

    let template = cfg.template()?;
    let effect = cfg.effect()?;
    let mut theta = template.initial();
    let mut spec = CausalSpec::new(
        template.clone(),
        &theta,
        effect.clone(),
        env.schema().clone(),
        env.episode_length(),
    )?;
    counters.formulas_built += 2;
    let episode_spec = EpisodeSpec::shaped(&effect, env.schema(), cfg.rl.beta)?;
    let mut buffer = CounterexampleBuffer::new(cfg.counterexample.capacity)?;
    counters.buffers_built += 1;
    let mut gp_rng = stream(seed, "gp-candidates");
    let mut optimizer = BayesOpt::new(template.bounds(), &cfg.gp, mode, &mut gp_rng)?;
    counters.gp_models_built += 1;

    let mut policy_rng = stream(seed, "policy");
    let mut sne_rng = stream(seed, "sne");
    let mut table = QTable::new(env.action_count());
    let mut log = OptimizationLog::default();
    let mut last_ucb = None;
    let sne_cfg = SneConfig {
        iterations: cfg.causal.iterations,
        eps_sufficiency: cfg.causal.eps_d1,
        eps_necessity: cfg.causal.eps_d2,
    };
    let mut rows = Vec::with_capacity(cfg.experiment.episodes);

    for k in 0..cfg.experiment.episodes {
        let epsilon = cfg.rl.epsilon.at(k);
        let out = rl::run_episode(
            env.as_mut(),
            &mut table,
            &episode_spec,
            &cfg.rl,
            epsilon,
            reset_seed,
            &mut policy_rng,
        )?;
        let success = env.goal_reached();
        let mut q_updates = out.q_updates;
        let mut added = 0;
        if out.counterexample {
            buffer.insert(StoredTrace {
                trajectory: out.trajectory.clone(),
                actions: out.actions.clone(),
                provenance: Provenance::EpisodeViolation,
                effect_robustness: out.effect_robustness.unwrap_or(0.0),
            })?;
            added += 1;
            let synth = generate_counterexamples(
                env.as_ref(),
                &out.trajectory,
                &out.actions,
                cfg.counterexample.perturb_step,
                &spec,
                cfg.counterexample.epsilon,
                mode,
            )?;
            for t in synth.kept {
                buffer.insert(t)?;
                added += 1;
            }
        }

        let used_theta = theta.clone();
        let mut scores = None;
        let mut j = None;
        if !buffer.is_empty() && (k + 1) % cfg.causal.every == 0 {
            let eval = evaluate_sne(&buffer, &spec, env.as_ref(), &sne_cfg, mode, &mut sne_rng)?;
            let value = objective_j(&eval.scores, cfg.causal.lambda_s, cfg.causal.lambda_n);
            log.push(OptimizationRow {
                iter: log.rows.len() + 1,
                theta: used_theta.clone(),
                s: eval.scores.sufficiency,
                n: eval.scores.necessity,
                e: eval.scores.existence,
                j: value,
                ucb: last_ucb,
            });
            optimizer.observe(&used_theta, value)?;
            let (next, ucb) = optimizer.propose(optimizer.model().len() + 1);
            last_ucb = Some(ucb);
            theta = next;
            spec = spec.with_theta(&theta)?;
            counters.formulas_built += 1;
            if cfg.counterexample.replay_counterfactuals {
                for cf in &eval.counterfactuals {
                    q_updates += rl::replay_trajectory(
                        &mut table,
                        &cf.trajectory,
                        &cf.actions,
                        &episode_spec,
                        &cfg.rl,
                        cfg.counterexample.replay_sweeps,
                    )?;
                }
            }
            scores = Some(eval.scores);
            j = Some(value);
        }
        rows.push(EpisodeRow {
            episode: k,
            success,
            cumulative_reward: out.cumulative_reward,
            effect_robustness: out.effect_robustness,
            counterexamples: added,
            q_updates,
            theta: Some(used_theta),
            scores,
            j,
        });
    }

    let mined_theta = optimizer
        .incumbent()
        .map(|(t, _)| t.to_vec())
        .unwrap_or_else(|| template.initial());
    let mined_formula = template.instantiate(&mined_theta)?.to_string();
    Ok(RunRecord {
        env: cfg.experiment.env,
        method: Method::GtlCirl,
        seed,
        rows,
        mined_formula,
        mined_theta: Some(template.effective(&mined_theta)),
        final_theta: Some(theta),
        qtable: table,
        optimization: Some(log),
        buffer: buffer.iter().cloned().collect(),
        instrumentation: counters,
        success_window: cfg.experiment.success_window,
    })
}

/// Plain Q-learning on the environment reward, optionally with one-step
/// hypothetical updates for every action not taken.
pub fn run_baseline(cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let method = cfg.experiment.method;
    if method == Method::GtlCirl {
        return Err(HarnessError::Config(
            "run_baseline needs a baseline method".into(),
        ));
    }
    let seed = cfg.experiment.seed;
    let mut env = build_env(cfg);
    let reset_seed = env_seed(seed);
    let mut spec = EpisodeSpec::unshaped();
    spec.hypothetical_actions = method == Method::CounterfactualRl;
    let mut policy_rng = stream(seed, "policy");
    let mut table = QTable::new(env.action_count());
    let mut rows = Vec::with_capacity(cfg.experiment.episodes);
    for k in 0..cfg.experiment.episodes {
        let epsilon = cfg.rl.epsilon.at(k);
        let out = rl::run_episode(
            env.as_mut(),
            &mut table,
            &spec,
            &cfg.rl,
            epsilon,
            reset_seed,
            &mut policy_rng,
        )?;
        rows.push(EpisodeRow {
            episode: k,
            success: env.goal_reached(),
            cumulative_reward: out.cumulative_reward,
            effect_robustness: None,
            counterexamples: 0,
            q_updates: out.q_updates,
            theta: None,
            scores: None,
            j: None,
        });
    }
    Ok(RunRecord {
        env: cfg.experiment.env,
        method,
        seed,
        rows,
        mined_formula: cfg.template.skeleton.clone(),
        mined_theta: None,
        final_theta: None,
        qtable: table,
        optimization: None,
        buffer: Vec::new(),
        instrumentation: Instrumentation::default(),
        success_window: cfg.experiment.success_window,
    })
}

/// Run `methods x seeds`, each with isolated state; results come back in
/// (method, seed) order.
pub fn sweep(
    cfg: &RunConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<Vec<RunRecord>, HarnessError> {
    let jobs: Vec<RunConfig> = methods
        .iter()
        .flat_map(|&m| {
            seeds.iter().map(move |&s| {
                let mut c = cfg.clone();
                c.experiment.method = m;
                c.experiment.seed = s;
                // the fan-out is already parallel
                c.experiment.parallel = false;
                c
            })
        })
        .collect();
    let mode = exec_mode(cfg);
    par::map(mode, &jobs, run).into_iter().collect()
}
