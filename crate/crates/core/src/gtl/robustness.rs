//! Quantitative (robustness) semantics.
//!
//! `N`-th largest lift for the counting neighbor operator: with fewer than
//! `N` eligible neighbors the result is [`MISSING_NEIGHBOR_ROBUSTNESS`].

use std::collections::BTreeSet;

use super::formula::{CmpOp, EdgeProp, Formula};
use super::trajectory::{GraphTrajectory, Schema};
use super::GtlError;

/// Robustness assigned to `∃^N` when fewer than `N` neighbors are eligible.
pub const MISSING_NEIGHBOR_ROBUSTNESS: f64 = -1.0e6;

/// Signed satisfaction margin. Zero counts as not satisfied.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Robustness(pub f64);

impl Robustness {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_satisfied(self) -> bool {
        self.0 > 0.0
    }
}

#[derive(Debug, Clone)]
enum EdgeTest {
    True,
    Compare {
        feature: usize,
        op: CmpOp,
        value: f64,
    },
}

impl EdgeTest {
    fn holds(&self, traj: &GraphTrajectory, edge: usize, t: usize) -> bool {
        match *self {
            EdgeTest::True => true,
            EdgeTest::Compare { feature, op, value } => {
                op.holds(traj.edge_value(edge, feature, t), value)
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Atomic {
        feature: usize,
        threshold: f64,
    },
    Not(Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Exists {
        n: usize,
        props: Vec<EdgeTest>,
        inner: Box<Node>,
    },
    Eventually {
        a: usize,
        b: usize,
        inner: Box<Node>,
    },
    Always {
        a: usize,
        b: usize,
        inner: Box<Node>,
    },
}

/// A formula resolved against a feature schema, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Monitor {
    root: Node,
    horizon: usize,
}

fn compile_props(props: &[EdgeProp], schema: &Schema) -> Result<Vec<EdgeTest>, GtlError> {
    props
        .iter()
        .map(|p| match p {
            EdgeProp::True => Ok(EdgeTest::True),
            EdgeProp::Compare { feature, op, value } => Ok(EdgeTest::Compare {
                feature: schema
                    .edge_feature(feature)
                    .ok_or_else(|| GtlError::UnknownFeature(feature.clone()))?,
                op: *op,
                value: *value,
            }),
        })
        .collect()
}

fn compile(f: &Formula, schema: &Schema) -> Result<Node, GtlError> {
    Ok(match f {
        Formula::Atomic { feature, threshold } => Node::Atomic {
            feature: schema
                .node_feature(feature)
                .ok_or_else(|| GtlError::UnknownFeature(feature.clone()))?,
            threshold: *threshold,
        },
        Formula::Not(i) => Node::Not(Box::new(compile(i, schema)?)),
        Formula::And(l, r) => {
            Node::And(Box::new(compile(l, schema)?), Box::new(compile(r, schema)?))
        }
        Formula::Or(l, r) => Node::Or(Box::new(compile(l, schema)?), Box::new(compile(r, schema)?)),
        Formula::ExistsN {
            n,
            edge_props,
            inner,
        } => {
            if *n == 0 || edge_props.is_empty() {
                return Err(GtlError::InvalidFormula(
                    "neighbor operator needs n >= 1 and at least one edge proposition".into(),
                ));
            }
            Node::Exists {
                n: *n,
                props: compile_props(edge_props, schema)?,
                inner: Box::new(compile(inner, schema)?),
            }
        }
        Formula::Eventually { a, b, inner } | Formula::Always { a, b, inner } if a > b => {
            let _ = inner;
            return Err(GtlError::InvalidFormula(format!(
                "inverted window [{a},{b}]"
            )));
        }
        Formula::Eventually { a, b, inner } => Node::Eventually {
            a: *a,
            b: *b,
            inner: Box::new(compile(inner, schema)?),
        },
        Formula::Always { a, b, inner } => Node::Always {
            a: *a,
            b: *b,
            inner: Box::new(compile(inner, schema)?),
        },
    })
}

fn collect_endpoints(
    traj: &GraphTrajectory,
    props: &[EdgeTest],
    t: usize,
    path: &mut Vec<usize>,
    out: &mut BTreeSet<usize>,
) {
    let depth = path.len() - 1;
    if depth == props.len() {
        out.insert(*path.last().unwrap());
        return;
    }
    let here = *path.last().unwrap();
    for &(next, edge) in traj.graph().neighbors(here) {
        if path.contains(&next) || !props[depth].holds(traj, edge, t) {
            continue;
        }
        path.push(next);
        collect_endpoints(traj, props, t, path, out);
        path.pop();
    }
}

fn eligible(traj: &GraphTrajectory, node: usize, props: &[EdgeTest], t: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    if props.len() == 1 {
        for &(next, edge) in traj.graph().neighbors(node) {
            if props[0].holds(traj, edge, t) {
                out.insert(next);
            }
        }
        return out;
    }
    let mut path = vec![node];
    collect_endpoints(traj, props, t, &mut path, &mut out);
    out
}

fn eval(node: &Node, traj: &GraphTrajectory, v: usize, t: usize) -> f64 {
    match node {
        Node::Atomic { feature, threshold } => traj.node_value(v, *feature, t) - threshold,
        Node::Not(i) => -eval(i, traj, v, t),
        Node::And(l, r) => eval(l, traj, v, t).min(eval(r, traj, v, t)),
        Node::Or(l, r) => eval(l, traj, v, t).max(eval(r, traj, v, t)),
        Node::Eventually { a, b, inner } => (t + a..=t + b)
            .map(|s| eval(inner, traj, v, s))
            .fold(f64::NEG_INFINITY, f64::max),
        Node::Always { a, b, inner } => (t + a..=t + b)
            .map(|s| eval(inner, traj, v, s))
            .fold(f64::INFINITY, f64::min),
        Node::Exists { n, props, inner } => {
            let mut values: Vec<f64> = eligible(traj, v, props, t)
                .into_iter()
                .map(|u| eval(inner, traj, u, t))
                .collect();
            if values.len() < *n {
                return MISSING_NEIGHBOR_ROBUSTNESS;
            }
            values.sort_unstable_by(|x, y| y.total_cmp(x));
            values[n - 1]
        }
    }
}

impl Monitor {
    pub fn new(formula: &Formula, schema: &Schema) -> Result<Self, GtlError> {
        Ok(Self {
            root: compile(formula, schema)?,
            horizon: formula.horizon(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check(&self, traj: &GraphTrajectory, t: usize) -> Result<(), GtlError> {
        if traj.is_empty() || t + self.horizon > traj.horizon() {
            return Err(GtlError::WindowExceedsHorizon {
                needed: t + self.horizon,
                available: if traj.is_empty() { 0 } else { traj.horizon() },
            });
        }
        Ok(())
    }

    /// Robustness at `node` and time `t`.
    pub fn robustness(
        &self,
        traj: &GraphTrajectory,
        node: usize,
        t: usize,
    ) -> Result<f64, GtlError> {
        if !traj.graph().contains_node(node) {
            return Err(GtlError::UnknownNode(node));
        }
        self.check(traj, t)?;
        Ok(eval(&self.root, traj, node, t))
    }

    /// Robustness of "some node satisfies the formula": the maximum over nodes.
    pub fn any_node(&self, traj: &GraphTrajectory, t: usize) -> Result<f64, GtlError> {
        self.check(traj, t)?;
        Ok((0..traj.graph().node_count())
            .map(|v| eval(&self.root, traj, v, t))
            .fold(MISSING_NEIGHBOR_ROBUSTNESS, f64::max))
    }

    /// Per-node robustness at time `t`.
    pub fn per_node(&self, traj: &GraphTrajectory, t: usize) -> Result<Vec<f64>, GtlError> {
        self.check(traj, t)?;
        Ok((0..traj.graph().node_count())
            .map(|v| eval(&self.root, traj, v, t))
            .collect())
    }
}

/// Robustness of `formula` on `traj` at `node` and time `t`.
pub fn robustness(
    traj: &GraphTrajectory,
    formula: &Formula,
    node: usize,
    t: usize,
) -> Result<Robustness, GtlError> {
    Monitor::new(formula, traj.schema())?
        .robustness(traj, node, t)
        .map(Robustness)
}

/// Robustness of `formula` holding at some node: max over all nodes.
pub fn trajectory_robustness(
    traj: &GraphTrajectory,
    formula: &Formula,
    t: usize,
) -> Result<Robustness, GtlError> {
    Monitor::new(formula, traj.schema())?
        .any_node(traj, t)
        .map(Robustness)
}

/// Endpoints of simple paths from `node` whose i-th edge satisfies `edge_props[i]` at `t`.
pub fn eligible_neighbors(
    traj: &GraphTrajectory,
    node: usize,
    edge_props: &[EdgeProp],
    t: usize,
) -> Result<BTreeSet<usize>, GtlError> {
    if !traj.graph().contains_node(node) {
        return Err(GtlError::UnknownNode(node));
    }
    let props = compile_props(edge_props, traj.schema())?;
    Ok(eligible(traj, node, &props, t))
}
