//! Graph temporal logic: graphs, graph-temporal trajectories, formulas and
//! their robustness semantics.

mod formula;
mod graph;
pub mod io;
mod parser;
mod robustness;
mod trajectory;

use thiserror::Error;

pub use formula::{CmpOp, EdgeProp, Formula};
pub use graph::Graph;
pub use parser::{
    parse_formula, parse_formula_with, ParseError, ParseErrorKind, ParseOptions, BOOLEAN_THRESHOLD,
};
pub use robustness::{
    eligible_neighbors, robustness, trajectory_robustness, Monitor, Robustness,
    MISSING_NEIGHBOR_ROBUSTNESS,
};
pub use trajectory::{Frame, GraphTrajectory, Schema};

#[derive(Debug, Error)]
pub enum GtlError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid formula: {0}")]
    InvalidFormula(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
    #[error("formula needs time index {needed} but the trajectory ends at {available}")]
    WindowExceedsHorizon { needed: usize, available: usize },
    #[error("trace line {line}: {message}")]
    TraceFormat { line: usize, message: String },
}
