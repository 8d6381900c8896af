use std::sync::Arc;

use super::{Graph, GtlError};

/// Feature names carried by every node and every edge of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub node_features: Vec<String>,
    pub edge_features: Vec<String>,
}

impl Schema {
    pub fn new<S: Into<String>>(
        node_features: impl IntoIterator<Item = S>,
        edge_features: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            node_features: node_features.into_iter().map(Into::into).collect(),
            edge_features: edge_features.into_iter().map(Into::into).collect(),
        }
    }

    pub fn node_feature(&self, name: &str) -> Option<usize> {
        self.node_features.iter().position(|f| f == name)
    }

    pub fn edge_feature(&self, name: &str) -> Option<usize> {
        self.edge_features.iter().position(|f| f == name)
    }
}

/// One time slice: node labels laid out `[node][feature]`, edge labels `[edge][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub nodes: Vec<f64>,
    pub edges: Vec<f64>,
}

/// Node and edge labelings of a fixed graph over time indices `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTrajectory {
    graph: Arc<Graph>,
    schema: Arc<Schema>,
    node_data: Vec<f64>,
    edge_data: Vec<f64>,
    frames: usize,
}

impl GraphTrajectory {
    pub fn new(graph: Arc<Graph>, schema: Arc<Schema>) -> Self {
        Self {
            graph,
            schema,
            node_data: Vec::new(),
            edge_data: Vec::new(),
            frames: 0,
        }
    }

    pub fn from_frames(
        graph: Arc<Graph>,
        schema: Arc<Schema>,
        frames: impl IntoIterator<Item = Frame>,
    ) -> Result<Self, GtlError> {
        let mut traj = Self::new(graph, schema);
        for frame in frames {
            traj.push_frame(frame)?;
        }
        Ok(traj)
    }

    fn node_stride(&self) -> usize {
        self.graph.node_count() * self.schema.node_features.len()
    }

    fn edge_stride(&self) -> usize {
        self.graph.edge_count() * self.schema.edge_features.len()
    }

    pub fn push_frame(&mut self, frame: Frame) -> Result<(), GtlError> {
        if frame.nodes.len() != self.node_stride() || frame.edges.len() != self.edge_stride() {
            return Err(GtlError::InvalidTrajectory(format!(
                "frame has {} node / {} edge values, expected {} / {}",
                frame.nodes.len(),
                frame.edges.len(),
                self.node_stride(),
                self.edge_stride()
            )));
        }
        self.node_data.extend_from_slice(&frame.nodes);
        self.edge_data.extend_from_slice(&frame.edges);
        self.frames += 1;
        Ok(())
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    /// Last valid time index. Panics on an empty trajectory.
    pub fn horizon(&self) -> usize {
        assert!(self.frames > 0, "empty trajectory has no horizon");
        self.frames - 1
    }

    pub fn frame(&self, t: usize) -> Frame {
        let ns = self.node_stride();
        let es = self.edge_stride();
        Frame {
            nodes: self.node_data[t * ns..(t + 1) * ns].to_vec(),
            edges: self.edge_data[t * es..(t + 1) * es].to_vec(),
        }
    }

    /// Sub-trajectory covering time indices `start..=end`, re-based to start at 0.
    pub fn window(&self, start: usize, end: usize) -> GraphTrajectory {
        let ns = self.node_stride();
        let es = self.edge_stride();
        GraphTrajectory {
            graph: Arc::clone(&self.graph),
            schema: Arc::clone(&self.schema),
            node_data: self.node_data[start * ns..(end + 1) * ns].to_vec(),
            edge_data: self.edge_data[start * es..(end + 1) * es].to_vec(),
            frames: end + 1 - start,
        }
    }

    #[inline]
    pub fn node_value(&self, node: usize, feature: usize, t: usize) -> f64 {
        let nf = self.schema.node_features.len();
        self.node_data[t * self.node_stride() + node * nf + feature]
    }

    #[inline]
    pub fn edge_value(&self, edge: usize, feature: usize, t: usize) -> f64 {
        let ef = self.schema.edge_features.len();
        self.edge_data[t * self.edge_stride() + edge * ef + feature]
    }

    pub fn node_value_by_name(&self, node: usize, feature: &str, t: usize) -> Option<f64> {
        let f = self.schema.node_feature(feature)?;
        Some(self.node_value(node, f, t))
    }

    pub fn edge_value_by_name(&self, edge: usize, feature: &str, t: usize) -> Option<f64> {
        let f = self.schema.edge_feature(feature)?;
        Some(self.edge_value(edge, f, t))
    }

    pub fn set_node_value(&mut self, node: usize, feature: usize, t: usize, value: f64) {
        let nf = self.schema.node_features.len();
        let idx = t * self.node_stride() + node * nf + feature;
        self.node_data[idx] = value;
    }
}
