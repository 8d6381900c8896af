use std::collections::VecDeque;
use std::sync::Arc;

use super::table::StateKey;
use crate::gtl::{Frame, Graph, GraphTrajectory, GtlError, Schema};

/// The last `tau` observations, left-padded with the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct TauState {
    tau: usize,
    time: usize,
    frames: VecDeque<Frame>,
}

impl TauState {
    pub fn new(initial: Frame, tau: usize) -> Self {
        let tau = tau.max(1);
        Self {
            tau,
            time: 0,
            frames: std::iter::repeat_n(initial, tau).collect(),
        }
    }

    pub fn push(&mut self, frame: Frame) {
        self.frames.pop_front();
        self.frames.push_back(frame);
        self.time += 1;
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Steps taken since the episode started.
    pub fn time(&self) -> usize {
        self.time
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter()
    }

    /// Hash of the step index and the window quantized to `resolution`.
    pub fn key(&self, resolution: f64) -> StateKey {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.time as u64);
        for f in &self.frames {
            for &x in f.nodes.iter().chain(&f.edges) {
                feed((x / resolution).round() as i64 as u64);
            }
        }
        StateKey(h)
    }

    pub fn to_trajectory(
        &self,
        graph: &Arc<Graph>,
        schema: &Arc<Schema>,
    ) -> Result<GraphTrajectory, GtlError> {
        GraphTrajectory::from_frames(
            Arc::clone(graph),
            Arc::clone(schema),
            self.frames.iter().cloned(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(x: f64) -> Frame {
        Frame {
            nodes: vec![x],
            edges: vec![],
        }
    }

    #[test]
    fn padding_and_sliding() {
        let mut w = TauState::new(frame(0.0), 3);
        assert_eq!(w.len(), 3);
        w.push(frame(1.0));
        w.push(frame(2.0));
        w.push(frame(3.0));
        let xs: Vec<f64> = w.frames().map(|f| f.nodes[0]).collect();
        assert_eq!(xs, [1.0, 2.0, 3.0]);
        assert_eq!(w.time(), 3);
    }

    #[test]
    fn key_quantizes_and_tracks_time() {
        let a = TauState::new(frame(0.901), 2);
        let b = TauState::new(frame(0.899), 2);
        let c = TauState::new(frame(0.91), 2);
        assert_eq!(a.key(0.01), b.key(0.01));
        assert_ne!(a.key(0.01), c.key(0.01));
        let mut d = a.clone();
        d.push(frame(0.9));
        assert_ne!(a.key(0.01), d.key(0.01));
    }
}
