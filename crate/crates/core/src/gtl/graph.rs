use std::collections::BTreeSet;

use super::GtlError;

/// Undirected graph over nodes `0..node_count`.
///
/// Edges are stored with `u < v` and keep their insertion index, which is the
/// index used for edge labels in a [`GraphTrajectory`](super::GraphTrajectory).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    // (neighbor, edge index), sorted by neighbor
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GtlError> {
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); node_count];
        let mut normalized = Vec::with_capacity(edges.len());
        for (idx, &(a, b)) in edges.iter().enumerate() {
            if a >= node_count || b >= node_count {
                return Err(GtlError::InvalidGraph(format!(
                    "edge {a}-{b} references a node outside 0..{node_count}"
                )));
            }
            if a == b {
                return Err(GtlError::InvalidGraph(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(GtlError::InvalidGraph(format!(
                    "duplicate edge {}-{}",
                    e.0, e.1
                )));
            }
            adjacency[a].push((b, idx));
            adjacency[b].push((a, idx));
            normalized.push(e);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: normalized,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_node(&self, node: usize) -> bool {
        node < self.node_count
    }

    /// Neighbors of `node` with the index of the connecting edge.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|(n, _)| *n == b)
            .map(|&(_, e)| e)
    }

    /// Hop distance from `src` to every node (`usize::MAX` if unreachable).
    pub fn hop_distances(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count];
        let mut queue = std::collections::VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_edges() {
        assert!(Graph::new(3, &[(0, 3)]).is_err());
        assert!(Graph::new(3, &[(1, 1)]).is_err());
        assert!(Graph::new(3, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn adjacency_is_symmetric() {
        let g = Graph::new(4, &[(0, 1), (2, 1), (3, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (0, 3)]);
        assert_eq!(g.neighbors(1), &[(0, 0), (2, 1)]);
        assert_eq!(g.edge_index(2, 1), Some(1));
        assert_eq!(g.edge_index(2, 3), None);
        assert_eq!(g.hop_distances(2), vec![2, 1, 0, 3]);
    }
}
