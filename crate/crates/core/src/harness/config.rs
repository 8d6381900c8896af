//! Run configuration: TOML sections layered over the built-in defaults of
//! the selected environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::causal::{CauseTemplate, Slot};
use crate::env::{GeneParams, GridParams};
use crate::gp::GpConfig;
use crate::gtl::{parse_formula, Formula};
use crate::rl::RlConfig;

pub const GENE_DEFAULTS: &str = include_str!("../../configs/gene.toml");
pub const GRID_DEFAULTS: &str = include_str!("../../configs/grid.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Gene,
    Grid,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Gene => "gene",
            EnvKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GtlCirl,
    StandardRl,
    CounterfactualRl,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::GtlCirl,
        Method::StandardRl,
        Method::CounterfactualRl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GtlCirl => "gtl_cirl",
            Method::StandardRl => "standard_rl",
            Method::CounterfactualRl => "counterfactual_rl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub episodes: usize,
    pub output_dir: PathBuf,
    /// Trailing episodes averaged into the reported success rate.
    pub success_window: usize,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub gene: GeneParams,
    pub grid: GridParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub skeleton: String,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectConfig {
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalConfig {
    pub lambda_s: f64,
    pub lambda_n: f64,
    pub eps_d1: f64,
    pub eps_d2: f64,
    pub iterations: usize,
    /// Refine the cause every this many episodes.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub epsilon: f64,
    pub capacity: usize,
    pub perturb_step: usize,
    /// Learn from the counterfactual rollouts of each refinement round.
    pub replay_counterfactuals: bool,
    /// Backward passes over each replayed rollout.
    pub replay_sweeps: usize,
    /// Write the final buffer as trace files.
    pub dump: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub env: EnvConfig,
    pub rl: RlConfig,
    pub effect: EffectConfig,
    pub template: TemplateConfig,
    pub causal: CausalConfig,
    pub gp: GpConfig,
    pub counterexample: CounterexampleConfig,
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

impl RunConfig {
    pub fn builtin(kind: EnvKind) -> Self {
        let text = match kind {
            EnvKind::Gene => GENE_DEFAULTS,
            EnvKind::Grid => GRID_DEFAULTS,
        };
        toml::from_str(text).expect("built-in configuration is valid")
    }

    /// Parse a config; missing keys fall back to the defaults of the
    /// environment named in `[experiment] env` (gene when absent).
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let kind = user
            .get("experiment")
            .and_then(|e| e.get("env"))
            .and_then(|v| v.as_str())
            .unwrap_or("gene");
        let defaults = match kind {
            "gene" => GENE_DEFAULTS,
            "grid" => GRID_DEFAULTS,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown environment `{other}`"
                )))
            }
        };
        let mut table: toml::Table =
            toml::from_str(defaults).expect("built-in configuration is valid");
        // a user template replaces the default one wholesale
        if user.contains_key("template") {
            table.remove("template");
        }
        merge(&mut table, user);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn template(&self) -> Result<CauseTemplate, HarnessError> {
        Ok(CauseTemplate::new(
            self.template.skeleton.clone(),
            self.template.slots.clone(),
        )?)
    }

    pub fn effect(&self) -> Result<Formula, HarnessError> {
        parse_formula(&self.effect.formula)
            .map_err(|e| HarnessError::Config(format!("effect formula: {e}")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.experiment.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        self.rl
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.template()?;
        self.effect()?;
        if let Err(e) = self.env.gene.validate() {
            return bad(e);
        }
        let c = &self.causal;
        if c.iterations == 0 || c.every == 0 {
            return bad("causal iterations and cadence must be at least 1".into());
        }
        if c.eps_d1 < 0.0 || c.eps_d2 < 0.0 {
            return bad("eps_d1 and eps_d2 must be non-negative".into());
        }
        let ce = &self.counterexample;
        if !(ce.epsilon > 0.0) || ce.capacity == 0 {
            return bad("perturbation range and buffer capacity must be positive".into());
        }
        if self.gp.length_scale <= 0.0 {
            return bad("gp length_scale must be positive".into());
        }
        Ok(())
    }
}
