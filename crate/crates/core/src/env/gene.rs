//! Gene-regulation network of biological units (BUs).
//!
//! Each BU carries four binary genes. A hidden rule decides whether therapy
//! succeeds: some BU `v` keeps the diseased pattern `G1=G2=G4=1, G3=0` over
//! the pattern window, has a `conn` neighbor expressing G1, G2 or G4 at t=0,
//! and receives edits of G1, G2 and G4 landing inside their respective
//! windows. When the rule fires, disease progression drops to zero from
//! `effect_start` on; otherwise it drifts upward with the fraction of
//! diseased BUs. Edits are recorded as indicator features and do not change
//! the gene pattern itself.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{check_same_layout, Action, EnvError, Environment, Intervention, StateVar};
use crate::gtl::{Formula, Frame, Graph, GraphTrajectory, Monitor, Schema};
use crate::rng::Rng;

const G1: usize = 0;
const G2: usize = 1;
const G4: usize = 3;
const PROGRESSION: usize = 4;
const MODIFY: usize = 5;
const EDITED: usize = 8;
const DISEASED: [u8; 4] = [1, 1, 0, 1];

pub const NODE_FEATURES: [&str; 11] = [
    "G1",
    "G2",
    "G3",
    "G4",
    "DiseaseProgression",
    "ModifyG1",
    "ModifyG2",
    "ModifyG4",
    "EditedG1",
    "EditedG2",
    "EditedG4",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneParams {
    pub bu_count: usize,
    pub mean_degree: f64,
    pub episode_length: usize,
    pub initial_progression: f64,
    pub drift: f64,
    pub pattern_window: (usize, usize),
    /// Landing windows for the G1, G2 and G4 edits.
    pub modify_windows: [(usize, usize); 3],
    pub effect_start: usize,
}

impl Default for GeneParams {
    fn default() -> Self {
        Self {
            bu_count: 8,
            mean_degree: 3.0,
            episode_length: 16,
            initial_progression: 0.5,
            drift: 0.02,
            pattern_window: (0, 10),
            modify_windows: [(0, 3), (3, 6), (6, 9)],
            effect_start: 12,
        }
    }
}

impl GeneParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.bu_count < 2 {
            return Err("gene network needs at least two units".into());
        }
        let last_cause = self
            .modify_windows
            .iter()
            .map(|w| w.1)
            .chain([self.pattern_window.1])
            .max()
            .unwrap();
        if self.effect_start <= last_cause {
            return Err("effect_start must come after every cause window".into());
        }
        if self.episode_length < self.effect_start {
            return Err("episode too short for the effect window".into());
        }
        if self.modify_windows.iter().any(|w| w.0 > w.1)
            || self.pattern_window.0 > self.pattern_window.1
        {
            return Err("inverted gene window".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneAction {
    NoOp,
    /// Edit G1, G2 or G4 (slot 0, 1, 2) on `unit`.
    Modify {
        unit: usize,
        slot: usize,
    },
}

impl GeneAction {
    pub fn encode(self) -> Action {
        match self {
            GeneAction::NoOp => 0,
            GeneAction::Modify { unit, slot } => 1 + 3 * unit + slot,
        }
    }

    pub fn decode(action: Action) -> Self {
        if action == 0 {
            GeneAction::NoOp
        } else {
            GeneAction::Modify {
                unit: (action - 1) / 3,
                slot: (action - 1) % 3,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneEnv {
    params: GeneParams,
    graph: Arc<Graph>,
    schema: Arc<Schema>,
    t: usize,
    genes: Vec<[u8; 4]>,
    edited: Vec<[bool; 3]>,
    progression: f64,
    // per snapshot
    gene_history: Vec<Vec<[u8; 4]>>,
    edit_history: Vec<Vec<[bool; 3]>>,
    frames: Vec<Frame>,
    rule_fired: Option<bool>,
    last_reward: f64,
}

impl GeneEnv {
    pub fn new(params: GeneParams, seed: u64) -> Self {
        let schema = Arc::new(Schema::new(NODE_FEATURES, ["conn"]));
        let graph = Arc::new(Graph::new(params.bu_count, &[]).expect("edgeless graph"));
        let mut env = Self {
            params,
            graph,
            schema,
            t: 0,
            genes: Vec::new(),
            edited: Vec::new(),
            progression: 0.0,
            gene_history: Vec::new(),
            edit_history: Vec::new(),
            frames: Vec::new(),
            rule_fired: None,
            last_reward: 0.0,
        };
        env.reset(seed);
        env
    }

    pub fn params(&self) -> &GeneParams {
        &self.params
    }

    pub fn genes(&self) -> &[[u8; 4]] {
        &self.genes
    }

    pub fn progression(&self) -> f64 {
        self.progression
    }

    /// Units currently carrying the diseased pattern.
    pub fn diseased_units(&self) -> Vec<usize> {
        (0..self.genes.len())
            .filter(|&v| self.genes[v] == DISEASED)
            .collect()
    }

    /// Diseased units with a supporting `conn` neighbor, i.e. the units on
    /// which the hidden rule can fire.
    pub fn treatable_units(&self) -> Vec<usize> {
        self.diseased_units()
            .into_iter()
            .filter(|&v| self.supported(&self.genes, v))
            .collect()
    }

    fn supported(&self, genes: &[[u8; 4]], v: usize) -> bool {
        self.graph
            .neighbors(v)
            .iter()
            .any(|&(u, _)| genes[u][G1] == 1 || genes[u][G2] == 1 || genes[u][G4] == 1)
    }

    /// Whether the hidden rule has fired, once it can be decided.
    pub fn rule_fired(&self) -> Option<bool> {
        self.rule_fired
    }

    /// Direct check of the hidden rule on the recorded history.
    fn evaluate_rule(&self) -> bool {
        let (p0, p1) = self.params.pattern_window;
        (0..self.params.bu_count).any(|v| {
            let pattern = (p0..=p1).all(|s| self.gene_history[s][v] == DISEASED);
            let support = self.supported(&self.gene_history[0], v);
            let edits = self
                .params
                .modify_windows
                .iter()
                .enumerate()
                .all(|(slot, &(a, b))| (a..=b).any(|s| self.edit_history[s][v][slot]));
            pattern && support && edits
        })
    }

    fn make_frame(&self) -> Frame {
        let n = self.params.bu_count;
        let last_edits = self.edit_history.last().expect("history is never empty");
        let mut nodes = Vec::with_capacity(n * NODE_FEATURES.len());
        for v in 0..n {
            nodes.extend(self.genes[v].iter().map(|&g| f64::from(g)));
            nodes.push(self.progression);
            nodes.extend(last_edits[v].iter().map(|&e| if e { 1.0 } else { 0.0 }));
            nodes.extend(self.edited[v].iter().map(|&e| if e { 1.0 } else { 0.0 }));
        }
        Frame {
            nodes,
            edges: vec![1.0; self.graph.edge_count()],
        }
    }

    fn refresh_current_frame(&mut self) {
        let frame = self.make_frame();
        *self.frames.last_mut().unwrap() = frame;
        *self.gene_history.last_mut().unwrap() = self.genes.clone();
    }

    fn random_layout(&mut self, rng: &mut Rng) {
        let n = self.params.bu_count;
        let mut pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        pairs.shuffle(rng);
        let m = ((n as f64 * self.params.mean_degree / 2.0).round() as usize).min(pairs.len());
        let mut edges: Vec<(usize, usize)> = pairs[..m].to_vec();

        let mut genes: Vec<[u8; 4]> = (0..n)
            .map(|_| {
                let mut g = [0u8; 4];
                for x in &mut g {
                    *x = u8::from(rng.gen_bool(0.5));
                }
                g
            })
            .collect();
        let target = rng.gen_range(0..n);
        genes[target] = DISEASED;
        if !edges.iter().any(|&(a, b)| a == target || b == target) {
            let mut other = rng.gen_range(0..n - 1);
            if other >= target {
                other += 1;
            }
            edges.push((target.min(other), target.max(other)));
        }
        edges.sort_unstable();
        let graph = Graph::new(n, &edges).expect("generated graph is valid");
        let has_support = graph
            .neighbors(target)
            .iter()
            .any(|&(u, _)| genes[u][G1] == 1 || genes[u][G2] == 1 || genes[u][G4] == 1);
        if !has_support {
            let first = graph.neighbors(target)[0].0;
            genes[first][G1] = 1;
        }
        self.graph = Arc::new(graph);
        self.genes = genes;
    }

    fn start_history(&mut self) {
        let n = self.params.bu_count;
        self.t = 0;
        self.gene_history = vec![self.genes.clone()];
        self.edit_history = vec![vec![[false; 3]; n]];
        self.frames = Vec::new();
        self.frames.push(self.make_frame());
        self.rule_fired = None;
        self.last_reward = -self.progression;
    }

    fn treatable_by_rule(&self, f: &Formula) -> Option<(usize, usize, usize)> {
        // F[a,b](ModifyGk >= c) with c <= 1
        if let Formula::Eventually { a, b, inner } = f {
            if let Formula::Atomic { feature, threshold } = &**inner {
                let slot = match feature.as_str() {
                    "ModifyG1" => 0,
                    "ModifyG2" => 1,
                    "ModifyG4" => 2,
                    _ => return None,
                };
                if *threshold < 1.0 {
                    return Some((slot, *a, *b));
                }
            }
        }
        None
    }
}

impl Environment for GeneEnv {
    fn name(&self) -> &'static str {
        "gene"
    }

    fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    fn reset(&mut self, seed: u64) -> Frame {
        let mut rng = Rng::seed_from_u64(seed);
        self.random_layout(&mut rng);
        self.edited = vec![[false; 3]; self.params.bu_count];
        self.progression = self.params.initial_progression;
        self.start_history();
        self.frames[0].clone()
    }

    fn step(&mut self, action: Action) -> Result<Frame, EnvError> {
        if self.t >= self.params.episode_length {
            return Err(EnvError::EpisodeOver(self.t));
        }
        if action >= self.action_count() {
            return Err(EnvError::InvalidAction {
                action,
                count: self.action_count(),
            });
        }
        let n = self.params.bu_count;
        let mut edits = vec![[false; 3]; n];
        if let GeneAction::Modify { unit, slot } = GeneAction::decode(action) {
            edits[unit][slot] = true;
            self.edited[unit][slot] = true;
        }
        self.t += 1;
        self.edit_history.push(edits);
        self.gene_history.push(self.genes.clone());
        if self.t == self.params.effect_start {
            self.rule_fired = Some(self.evaluate_rule());
        }
        if self.rule_fired == Some(true) {
            self.progression = 0.0;
        } else {
            let diseased = self.diseased_units().len() as f64;
            self.progression =
                (self.progression + self.params.drift * diseased / n as f64).clamp(0.0, 1.0);
        }
        self.last_reward = -self.progression;
        let frame = self.make_frame();
        self.frames.push(frame.clone());
        Ok(frame)
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn force(&mut self, var: StateVar, value: f64) -> Result<(), EnvError> {
        if var.node >= self.params.bu_count {
            return Err(EnvError::NotForceable(var));
        }
        match var.feature {
            G1..=G4 => self.genes[var.node][var.feature] = u8::from(value >= 0.5),
            PROGRESSION => self.progression = value.clamp(0.0, 1.0),
            _ => return Err(EnvError::NotForceable(var)),
        }
        self.refresh_current_frame();
        Ok(())
    }

    fn restore_initial(&mut self, traj: &GraphTrajectory) -> Result<(), EnvError> {
        if traj.graph().node_count() != self.params.bu_count {
            return Err(EnvError::Mismatch("unit count differs".into()));
        }
        // the topology is part of the restored state
        self.graph = Arc::clone(traj.graph());
        check_same_layout(&self.graph, &self.schema, traj)?;
        let n = self.params.bu_count;
        let mut genes = vec![[0u8; 4]; n];
        let mut edited = vec![[false; 3]; n];
        let mut edits = vec![[false; 3]; n];
        for v in 0..n {
            for (g, slot) in genes[v].iter_mut().enumerate() {
                *slot = u8::from(traj.node_value(v, g, 0) >= 0.5);
            }
            for k in 0..3 {
                edits[v][k] = traj.node_value(v, MODIFY + k, 0) >= 0.5;
                edited[v][k] = traj.node_value(v, EDITED + k, 0) >= 0.5;
            }
        }
        self.genes = genes;
        self.edited = edited;
        self.progression = traj.node_value(0, PROGRESSION, 0).clamp(0.0, 1.0);
        self.start_history();
        self.edit_history[0] = edits;
        self.frames[0] = self.make_frame();
        Ok(())
    }

    fn observation(&self) -> Frame {
        self.frames.last().unwrap().clone()
    }

    fn trajectory(&self) -> GraphTrajectory {
        GraphTrajectory::from_frames(
            Arc::clone(&self.graph),
            Arc::clone(&self.schema),
            self.frames.iter().cloned(),
        )
        .expect("frames match the schema")
    }

    fn time(&self) -> usize {
        self.t
    }

    fn episode_length(&self) -> usize {
        self.params.episode_length
    }

    fn action_count(&self) -> usize {
        1 + 3 * self.params.bu_count
    }

    fn perturbable_variables(&self) -> Vec<StateVar> {
        let mut vars: Vec<StateVar> = (0..self.params.bu_count)
            .flat_map(|node| (G1..=G4).map(move |feature| StateVar { node, feature }))
            .collect();
        vars.push(StateVar {
            node: 0,
            feature: PROGRESSION,
        });
        vars
    }

    fn raw_reward(&self) -> f64 {
        self.last_reward
    }

    /// Disease progression reached zero inside the effect window.
    fn goal_reached(&self) -> bool {
        let end = self.params.episode_length.saturating_sub(1);
        self.frames
            .iter()
            .enumerate()
            .skip(self.params.effect_start)
            .take_while(|(t, _)| *t <= end)
            .any(|(_, f)| f.nodes[PROGRESSION] == 0.0)
    }

    fn plan_intervention(
        &self,
        cause: &Formula,
        negate: bool,
        base: &GraphTrajectory,
        base_actions: &[Action],
        rng: &mut Rng,
    ) -> Result<Intervention, EnvError> {
        let mut edits = Vec::new();
        let mut observational: Option<Formula> = None;
        for c in cause.conjuncts() {
            match self.treatable_by_rule(c) {
                Some(e) => edits.push(e),
                None => {
                    observational = Some(match observational.take() {
                        None => c.clone(),
                        Some(prev) => Formula::and(prev, c.clone()),
                    })
                }
            }
        }
        if edits.is_empty() {
            return Err(EnvError::Unforceable(
                "cause has no edit windows to act on".into(),
            ));
        }
        let scores = match &observational {
            Some(f) => Monitor::new(f, base.schema())?.per_node(base, 0)?,
            None => vec![f64::INFINITY; self.params.bu_count],
        };
        let len = self.params.episode_length;
        let mut actions: Vec<Action> = base_actions.to_vec();
        actions.resize(len, GeneAction::NoOp.encode());
        // steps whose edit lands inside [a, b]
        let steps_for = |a: usize, b: usize| (a.max(1) - 1..b.min(len)).collect::<Vec<_>>();

        if negate {
            let (slot, a, b) = edits[0];
            for (v, &score) in scores.iter().enumerate() {
                if score <= 0.0 {
                    continue;
                }
                let edit = GeneAction::Modify { unit: v, slot }.encode();
                for s in steps_for(a, b) {
                    if actions[s] == edit {
                        actions[s] = GeneAction::NoOp.encode();
                    }
                }
            }
            return Ok(Intervention {
                state_overrides: Vec::new(),
                actions,
            });
        }

        let (unit, best) =
            scores
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (v, s)| if s > acc.1 { (v, s) } else { acc },
                );
        if best <= 0.0 {
            return Err(EnvError::Unforceable(
                "no unit satisfies the non-interventional part of the cause".into(),
            ));
        }
        let mut taken = vec![false; len];
        for &(slot, a, b) in &edits {
            let free: Vec<usize> = steps_for(a, b).into_iter().filter(|&s| !taken[s]).collect();
            let Some(&s) = free.get(rng.gen_range(0..free.len().max(1))) else {
                return Err(EnvError::Unforceable(format!(
                    "no free step for the edit window [{a},{b}]"
                )));
            };
            taken[s] = true;
            actions[s] = GeneAction::Modify { unit, slot }.encode();
        }
        Ok(Intervention {
            state_overrides: Vec::new(),
            actions,
        })
    }
}
