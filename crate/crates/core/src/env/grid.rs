//! Simplified power grid on the IEEE 14-bus topology.
//!
//! Voltages follow a linear response model instead of AC power flow:
//! generator support within two hops raises a bus, overloaded buses sag,
//! and under-voltage spreads to neighbors along in-service lines. Lines trip
//! for the rest of the episode once their flow exceeds the limit.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{check_same_layout, Action, EnvError, Environment, Intervention, StateVar};
use crate::gtl::{Formula, Frame, Graph, GraphTrajectory, Monitor, Schema};
use crate::rng::Rng;

pub const IEEE14_DATA: &str = include_str!("../../data/ieee14.txt");

const V: usize = 0;
const LOAD: usize = 1;
const PGEN: usize = 2;
const GEN_UP: usize = 3;
const FLOW: usize = 0;
const IN_SERVICE: usize = 1;

pub const NODE_FEATURES: [&str; 4] = ["V", "load", "Pgen", "G"];
pub const EDGE_FEATURES: [&str; 2] = ["P", "in_service"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub base_flow: f64,
    pub limit: f64,
}

/// Parse the bundled line-list format: `gen <bus>...` and `from to base limit`
/// rows with 1-based bus ids; `#` starts a comment.
pub fn parse_line_list(text: &str) -> Result<(Vec<Line>, Vec<usize>), String> {
    let mut lines = Vec::new();
    let mut gens = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let row = raw.split('#').next().unwrap().trim();
        if row.is_empty() {
            continue;
        }
        let err = |m: &str| format!("line {}: {m}", i + 1);
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields[0] == "gen" {
            for f in &fields[1..] {
                let bus: usize = f.parse().map_err(|_| err("bad generator bus"))?;
                gens.push(
                    bus.checked_sub(1)
                        .ok_or_else(|| err("bus ids start at 1"))?,
                );
            }
            continue;
        }
        let [from, to, base, limit] = fields[..] else {
            return Err(err("expected `from to base_flow limit`"));
        };
        let bus = |s: &str| -> Result<usize, String> {
            let b: usize = s.parse().map_err(|_| err("bad bus id"))?;
            b.checked_sub(1).ok_or_else(|| err("bus ids start at 1"))
        };
        let num = |s: &str| -> Result<f64, String> { s.parse().map_err(|_| err("bad number")) };
        lines.push(Line {
            from: bus(from)?,
            to: bus(to)?,
            base_flow: num(base)?,
            limit: num(limit)?,
        });
    }
    Ok((lines, gens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub episode_length: usize,
    pub threshold: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub support_gain: f64,
    /// Support weight for generators exactly two hops away.
    pub far_support: f64,
    pub overload_penalty: f64,
    pub overload_level: f64,
    pub cascade_gain: f64,
    pub gen_step: f64,
    pub gen_voltage_step: f64,
    pub gen_max: f64,
    pub shed_factor: f64,
    pub sag_range: (f64, f64),
    pub overloaded_buses: (usize, usize),
    pub overload_range: (f64, f64),
    /// Steps within which a generation increase counts as the response.
    pub response_window: (usize, usize),
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            episode_length: 20,
            threshold: 0.90,
            v_min: 0.80,
            v_max: 1.10,
            support_gain: 0.04,
            far_support: 0.5,
            overload_penalty: 0.01,
            overload_level: 1.1,
            cascade_gain: 0.5,
            gen_step: 0.1,
            gen_voltage_step: 0.05,
            gen_max: 1.0,
            shed_factor: 0.8,
            sag_range: (0.84, 0.895),
            overloaded_buses: (1, 2),
            overload_range: (1.15, 1.4),
            response_window: (1, 5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    NoOp,
    /// Index into the generator list.
    IncreaseGen(usize),
    ShedLoad(usize),
}

impl GridAction {
    pub fn encode(self, gen_count: usize) -> Action {
        match self {
            GridAction::NoOp => 0,
            GridAction::IncreaseGen(g) => 1 + g,
            GridAction::ShedLoad(b) => 1 + gen_count + b,
        }
    }

    pub fn decode(action: Action, gen_count: usize) -> Self {
        match action {
            0 => GridAction::NoOp,
            a if a <= gen_count => GridAction::IncreaseGen(a - 1),
            a => GridAction::ShedLoad(a - 1 - gen_count),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    params: GridParams,
    lines: Arc<Vec<Line>>,
    generators: Arc<Vec<usize>>,
    /// Generator support weight per (generator, bus).
    support: Arc<Vec<Vec<f64>>>,
    graph: Arc<Graph>,
    schema: Arc<Schema>,
    t: usize,
    voltage: Vec<f64>,
    load: Vec<f64>,
    pgen: Vec<f64>,
    gen_up: Vec<bool>,
    in_service: Vec<bool>,
    flow: Vec<f64>,
    frames: Vec<Frame>,
    last_reward: f64,
}

impl GridEnv {
    pub fn new(params: GridParams, seed: u64) -> Self {
        Self::from_data(params, IEEE14_DATA, seed).expect("bundled grid data is valid")
    }

    pub fn from_data(params: GridParams, data: &str, seed: u64) -> Result<Self, EnvError> {
        let (lines, generators) = parse_line_list(data).map_err(EnvError::Mismatch)?;
        let n = lines
            .iter()
            .flat_map(|l| [l.from, l.to])
            .chain(generators.iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        let pairs: Vec<(usize, usize)> = lines.iter().map(|l| (l.from, l.to)).collect();
        let graph = Graph::new(n, &pairs)?;
        let support = generators
            .iter()
            .map(|&g| {
                graph
                    .hop_distances(g)
                    .into_iter()
                    .map(|d| match d {
                        0 | 1 => 1.0,
                        2 => params.far_support,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        let mut env = Self {
            params,
            lines: Arc::new(lines),
            generators: Arc::new(generators),
            support: Arc::new(support),
            graph: Arc::new(graph),
            schema: Arc::new(Schema::new(NODE_FEATURES, EDGE_FEATURES)),
            t: 0,
            voltage: Vec::new(),
            load: Vec::new(),
            pgen: Vec::new(),
            gen_up: Vec::new(),
            in_service: Vec::new(),
            flow: Vec::new(),
            frames: Vec::new(),
            last_reward: 0.0,
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    pub fn voltages(&self) -> &[f64] {
        &self.voltage
    }

    pub fn loads(&self) -> &[f64] {
        &self.load
    }

    pub fn in_service(&self) -> &[bool] {
        &self.in_service
    }

    pub fn low_voltage_count(&self) -> usize {
        self.voltage
            .iter()
            .filter(|&&v| v < self.params.threshold)
            .count()
    }

    /// Overwrite the whole operating point, e.g. for scripted tests.
    pub fn set_state(&mut self, voltage: &[f64], load: &[f64]) -> Result<(), EnvError> {
        let n = self.graph.node_count();
        if voltage.len() != n || load.len() != n {
            return Err(EnvError::Mismatch(format!("expected {n} buses")));
        }
        self.voltage = voltage.to_vec();
        self.load = load.to_vec();
        self.in_service = vec![true; self.lines.len()];
        self.update_flows(false);
        self.start_history();
        Ok(())
    }

    fn update_flows(&mut self, allow_trip: bool) {
        self.flow = self
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if !self.in_service[i] {
                    return 0.0;
                }
                let p = l.base_flow * (self.load[l.from] + self.load[l.to])
                    / (self.voltage[l.from] + self.voltage[l.to]);
                if allow_trip && p > l.limit {
                    self.in_service[i] = false;
                    0.0
                } else {
                    p
                }
            })
            .collect();
    }

    fn make_frame(&self) -> Frame {
        let n = self.graph.node_count();
        let mut nodes = Vec::with_capacity(n * NODE_FEATURES.len());
        for b in 0..n {
            nodes.extend([
                self.voltage[b],
                self.load[b],
                self.pgen[b],
                if self.gen_up[b] { 1.0 } else { 0.0 },
            ]);
        }
        let mut edges = Vec::with_capacity(self.lines.len() * 2);
        for (i, &p) in self.flow.iter().enumerate() {
            edges.extend([p, if self.in_service[i] { 1.0 } else { 0.0 }]);
        }
        Frame { nodes, edges }
    }

    fn start_history(&mut self) {
        self.t = 0;
        self.frames = vec![self.make_frame()];
        self.last_reward = -(self.low_voltage_count() as f64);
    }

    fn clamp_v(&self, v: f64) -> f64 {
        v.clamp(self.params.v_min, self.params.v_max)
    }

    fn voltage_update(&self) -> Vec<f64> {
        let p = &self.params;
        let n = self.graph.node_count();
        let mut support = vec![0.0; n];
        for (gi, &bus) in self.generators.iter().enumerate() {
            if self.gen_up[bus] {
                for (b, s) in support.iter_mut().enumerate() {
                    *s += self.support[gi][b];
                }
            }
        }
        (0..n)
            .map(|b| {
                let overload = if self.load[b] > p.overload_level {
                    1.0
                } else {
                    0.0
                };
                let (sum, count) = self
                    .graph
                    .neighbors(b)
                    .iter()
                    .filter(|&&(_, e)| self.in_service[e])
                    .fold((0.0, 0usize), |(s, c), &(u, _)| {
                        (s + (self.voltage[u] - p.threshold).min(0.0), c + 1)
                    });
                let cascade = if count == 0 { 0.0 } else { sum / count as f64 };
                self.clamp_v(
                    self.voltage[b] + p.support_gain * support[b] - p.overload_penalty * overload
                        + p.cascade_gain * cascade,
                )
            })
            .collect()
    }

    fn threshold_of(cause: &Formula) -> Option<f64> {
        match cause {
            Formula::Atomic { feature, threshold } if feature == "V" => Some(*threshold),
            Formula::Atomic { .. } => None,
            Formula::Not(x)
            | Formula::ExistsN { inner: x, .. }
            | Formula::Eventually { inner: x, .. }
            | Formula::Always { inner: x, .. } => Self::threshold_of(x),
            Formula::And(l, r) | Formula::Or(l, r) => {
                Self::threshold_of(l).or_else(|| Self::threshold_of(r))
            }
        }
    }
}

/// Margin by which forced voltages clear the cause threshold.
const FORCE_MARGIN: f64 = 0.02;

impl Environment for GridEnv {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    fn reset(&mut self, seed: u64) -> Frame {
        let p = self.params.clone();
        let mut rng = Rng::seed_from_u64(seed);
        let n = self.graph.node_count();
        self.voltage = (0..n).map(|_| 1.0 + rng.gen_range(-0.02..0.04)).collect();
        self.load = (0..n).map(|_| rng.gen_range(0.7..1.0)).collect();
        self.pgen = vec![0.0; n];
        for &g in self.generators.iter() {
            self.pgen[g] = 0.5;
        }
        self.gen_up = vec![false; n];

        let plain: Vec<usize> = (0..n).filter(|b| !self.generators.contains(b)).collect();
        let center = *plain
            .choose(&mut rng)
            .expect("grid has non-generator buses");
        let mut sagged = vec![center];
        sagged.extend(self.graph.neighbors(center).iter().map(|&(u, _)| u));
        for &b in &sagged {
            self.voltage[b] = rng.gen_range(p.sag_range.0..p.sag_range.1);
        }
        let count = rng.gen_range(p.overloaded_buses.0..=p.overloaded_buses.1);
        for &b in (0..n).collect::<Vec<_>>().choose_multiple(&mut rng, count) {
            self.load[b] = rng.gen_range(p.overload_range.0..p.overload_range.1);
        }
        self.in_service = vec![true; self.lines.len()];
        self.update_flows(true);
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
        let p = self.params.clone();
        self.gen_up.iter_mut().for_each(|g| *g = false);
        match GridAction::decode(action, self.generators.len()) {
            GridAction::NoOp => {}
            GridAction::IncreaseGen(g) => {
                let bus = self.generators[g];
                self.pgen[bus] = (self.pgen[bus] + p.gen_step).min(p.gen_max);
                self.voltage[bus] = self.clamp_v(self.voltage[bus] + p.gen_voltage_step);
                self.gen_up[bus] = true;
            }
            GridAction::ShedLoad(b) => self.load[b] *= p.shed_factor,
        }
        self.voltage = self.voltage_update();
        self.update_flows(true);
        self.t += 1;
        self.last_reward = -(self.low_voltage_count() as f64);
        let frame = self.make_frame();
        self.frames.push(frame.clone());
        Ok(frame)
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn force(&mut self, var: StateVar, value: f64) -> Result<(), EnvError> {
        if var.node >= self.graph.node_count() {
            return Err(EnvError::NotForceable(var));
        }
        match var.feature {
            V => self.voltage[var.node] = self.clamp_v(value),
            LOAD => self.load[var.node] = value.max(0.0),
            _ => return Err(EnvError::NotForceable(var)),
        }
        self.update_flows(false);
        *self.frames.last_mut().unwrap() = self.make_frame();
        Ok(())
    }

    fn restore_initial(&mut self, traj: &GraphTrajectory) -> Result<(), EnvError> {
        check_same_layout(&self.graph, &self.schema, traj)?;
        let n = self.graph.node_count();
        self.voltage = (0..n).map(|b| traj.node_value(b, V, 0)).collect();
        self.load = (0..n).map(|b| traj.node_value(b, LOAD, 0)).collect();
        self.pgen = (0..n).map(|b| traj.node_value(b, PGEN, 0)).collect();
        self.gen_up = (0..n)
            .map(|b| traj.node_value(b, GEN_UP, 0) >= 0.5)
            .collect();
        self.in_service = (0..self.lines.len())
            .map(|e| traj.edge_value(e, IN_SERVICE, 0) >= 0.5)
            .collect();
        self.flow = (0..self.lines.len())
            .map(|e| traj.edge_value(e, FLOW, 0))
            .collect();
        self.start_history();
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
        1 + self.generators.len() + self.graph.node_count()
    }

    fn perturbable_variables(&self) -> Vec<StateVar> {
        (0..self.graph.node_count())
            .flat_map(|node| [V, LOAD].map(|feature| StateVar { node, feature }))
            .collect()
    }

    fn raw_reward(&self) -> f64 {
        self.last_reward
    }

    /// Some generator increased output inside the response window.
    fn goal_reached(&self) -> bool {
        let (a, b) = self.params.response_window;
        self.frames
            .iter()
            .enumerate()
            .skip(a)
            .take_while(|(t, _)| *t <= b)
            .any(|(_, f)| {
                f.nodes
                    .chunks(NODE_FEATURES.len())
                    .any(|bus| bus[GEN_UP] == 1.0)
            })
    }

    fn plan_intervention(
        &self,
        cause: &Formula,
        negate: bool,
        base: &GraphTrajectory,
        base_actions: &[Action],
        _rng: &mut Rng,
    ) -> Result<Intervention, EnvError> {
        let threshold = Self::threshold_of(cause)
            .ok_or_else(|| EnvError::Unforceable("cause has no voltage threshold".into()))?;
        let n = self.graph.node_count();
        let mut actions = base_actions.to_vec();
        actions.resize(self.params.episode_length, 0);
        let volts: Vec<f64> = (0..n).map(|b| base.node_value(b, V, 0)).collect();
        let mut overrides = Vec::new();
        let set = |b: usize, v: f64, o: &mut Vec<(StateVar, f64)>| {
            o.push((
                StateVar {
                    node: b,
                    feature: V,
                },
                v,
            ));
        };

        if negate {
            let scores = Monitor::new(cause, base.schema())?.per_node(base, 0)?;
            for (b, &s) in scores.iter().enumerate() {
                if s > 0.0 {
                    set(b, threshold + FORCE_MARGIN, &mut overrides);
                }
            }
        } else {
            let bus = (0..n)
                .min_by(|&a, &b| volts[a].total_cmp(&volts[b]))
                .expect("grid has buses");
            set(bus, threshold - FORCE_MARGIN, &mut overrides);
            for &(u, e) in self.graph.neighbors(bus) {
                let powered = base.edge_value(e, FLOW, 0) > 0.0;
                if powered && volts[u] >= threshold - FORCE_MARGIN {
                    set(u, threshold - FORCE_MARGIN, &mut overrides);
                }
            }
        }
        Ok(Intervention {
            state_overrides: overrides,
            actions,
        })
    }
}
