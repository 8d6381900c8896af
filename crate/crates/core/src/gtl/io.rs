//! Line-oriented trajectory text format.
//!
//! ```text
//! provenance episode-violation      (optional)
//! actions 0 3 3 1                   (optional)
//! graph 3 0-1 1-2
//! 0 0 V=1 load=0.9
//! 0 0-1 P=0.4
//! ...
//! ```
//!
//! Each time step lists one record per node, then one per edge. Lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::{Frame, Graph, GraphTrajectory, GtlError, Schema};

/// A trajectory plus the optional metadata lines of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub provenance: Option<String>,
    pub actions: Option<Vec<usize>>,
    pub trajectory: GraphTrajectory,
}

fn write_record(out: &mut String, names: &[String], values: &[f64]) {
    for (name, v) in names.iter().zip(values) {
        let _ = write!(out, " {name}={v}");
    }
    out.push('\n');
}

pub fn write_trajectory(traj: &GraphTrajectory) -> String {
    let mut out = String::new();
    let g = traj.graph();
    let _ = write!(out, "graph {}", g.node_count());
    for (a, b) in g.edges() {
        let _ = write!(out, " {a}-{b}");
    }
    out.push('\n');
    let schema = traj.schema();
    let nf = schema.node_features.len();
    let ef = schema.edge_features.len();
    for t in 0..traj.frame_count() {
        let frame = traj.frame(t);
        for v in 0..g.node_count() {
            let _ = write!(out, "{t} {v}");
            write_record(
                &mut out,
                &schema.node_features,
                &frame.nodes[v * nf..(v + 1) * nf],
            );
        }
        for (e, (a, b)) in g.edges().iter().enumerate() {
            let _ = write!(out, "{t} {a}-{b}");
            write_record(
                &mut out,
                &schema.edge_features,
                &frame.edges[e * ef..(e + 1) * ef],
            );
        }
    }
    out
}

pub fn write_trace_file(file: &TraceFile) -> String {
    let mut out = String::new();
    if let Some(p) = &file.provenance {
        let _ = writeln!(out, "provenance {p}");
    }
    if let Some(actions) = &file.actions {
        out.push_str("actions");
        for a in actions {
            let _ = write!(out, " {a}");
        }
        out.push('\n');
    }
    out.push_str(&write_trajectory(&file.trajectory));
    out
}

fn bad(line: usize, msg: impl Into<String>) -> GtlError {
    GtlError::TraceFormat {
        line,
        message: msg.into(),
    }
}

fn parse_edge(tok: &str, line: usize) -> Result<(usize, usize), GtlError> {
    let (a, b) = tok
        .split_once('-')
        .ok_or_else(|| bad(line, format!("expected edge `u-v`, found `{tok}`")))?;
    let a = a
        .parse()
        .map_err(|_| bad(line, format!("bad node id in `{tok}`")))?;
    let b = b
        .parse()
        .map_err(|_| bad(line, format!("bad node id in `{tok}`")))?;
    Ok((a, b))
}

fn parse_fields<'a>(
    toks: impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<Vec<(&'a str, f64)>, GtlError> {
    toks.map(|tok| {
        let (name, value) = tok
            .split_once('=')
            .ok_or_else(|| bad(line, format!("expected `feature=value`, found `{tok}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| bad(line, format!("bad value in `{tok}`")))?;
        Ok((name, value))
    })
    .collect()
}

pub fn parse_trace_file(text: &str) -> Result<TraceFile, GtlError> {
    let mut provenance = None;
    let mut actions = None;
    let mut graph: Option<Graph> = None;
    let mut node_names: Option<Vec<String>> = None;
    let mut edge_names: Option<Vec<String>> = None;
    // (t, node) -> values, (t, edge) -> values
    let mut node_rows: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut edge_rows: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut max_t: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let head = toks.next().unwrap();
        match head {
            "provenance" => provenance = Some(toks.collect::<Vec<_>>().join(" ")),
            "actions" => {
                actions = Some(
                    toks.map(|t| {
                        t.parse()
                            .map_err(|_| bad(line, format!("bad action `{t}`")))
                    })
                    .collect::<Result<Vec<usize>, _>>()?,
                )
            }
            "graph" => {
                let n: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(line, "graph header needs a node count"))?;
                let edges = toks
                    .map(|t| parse_edge(t, line))
                    .collect::<Result<Vec<_>, _>>()?;
                graph = Some(Graph::new(n, &edges)?);
            }
            _ => {
                let g = graph
                    .as_ref()
                    .ok_or_else(|| bad(line, "record before graph header"))?;
                let t: usize = head
                    .parse()
                    .map_err(|_| bad(line, format!("expected time index, found `{head}`")))?;
                let target = toks
                    .next()
                    .ok_or_else(|| bad(line, "missing node or edge"))?;
                let fields = parse_fields(toks, line)?;
                let names: Vec<String> = fields.iter().map(|(n, _)| n.to_string()).collect();
                let values: Vec<f64> = fields.iter().map(|&(_, v)| v).collect();
                max_t = Some(max_t.map_or(t, |m: usize| m.max(t)));
                if target.contains('-') {
                    let (a, b) = parse_edge(target, line)?;
                    let e = g
                        .edge_index(a, b)
                        .ok_or_else(|| bad(line, format!("edge {a}-{b} not in graph")))?;
                    match &edge_names {
                        None => edge_names = Some(names),
                        Some(existing) if *existing != names => {
                            return Err(bad(line, "edge features differ from earlier records"))
                        }
                        _ => {}
                    }
                    if edge_rows.insert((t, e), values).is_some() {
                        return Err(bad(
                            line,
                            format!("duplicate record for edge {a}-{b} at t={t}"),
                        ));
                    }
                } else {
                    let v: usize = target
                        .parse()
                        .map_err(|_| bad(line, format!("bad node id `{target}`")))?;
                    if !g.contains_node(v) {
                        return Err(bad(line, format!("node {v} not in graph")));
                    }
                    match &node_names {
                        None => node_names = Some(names),
                        Some(existing) if *existing != names => {
                            return Err(bad(line, "node features differ from earlier records"))
                        }
                        _ => {}
                    }
                    if node_rows.insert((t, v), values).is_some() {
                        return Err(bad(line, format!("duplicate record for node {v} at t={t}")));
                    }
                }
            }
        }
    }

    let graph = Arc::new(graph.ok_or_else(|| bad(0, "missing graph header"))?);
    let max_t = max_t.ok_or_else(|| bad(0, "trajectory has no records"))?;
    let schema = Arc::new(Schema {
        node_features: node_names.unwrap_or_default(),
        edge_features: edge_names.unwrap_or_default(),
    });
    let mut traj = GraphTrajectory::new(Arc::clone(&graph), schema);
    for t in 0..=max_t {
        let mut frame = Frame {
            nodes: Vec::new(),
            edges: Vec::new(),
        };
        for v in 0..graph.node_count() {
            let row = node_rows
                .remove(&(t, v))
                .ok_or_else(|| bad(0, format!("missing record for node {v} at t={t}")))?;
            frame.nodes.extend(row);
        }
        for e in 0..graph.edge_count() {
            let row = edge_rows.remove(&(t, e)).ok_or_else(|| {
                let (a, b) = graph.edges()[e];
                bad(0, format!("missing record for edge {a}-{b} at t={t}"))
            })?;
            frame.edges.extend(row);
        }
        traj.push_frame(frame)?;
    }
    Ok(TraceFile {
        provenance,
        actions,
        trajectory: traj,
    })
}

pub fn parse_trajectory(text: &str) -> Result<GraphTrajectory, GtlError> {
    parse_trace_file(text).map(|f| f.trajectory)
}
