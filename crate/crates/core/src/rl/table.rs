use std::collections::HashMap;
use std::fmt;

use crate::env::Action;

/// Hashed identity of a window state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey(pub u64);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    values: Vec<f64>,
    visits: Vec<u64>,
}

/// Sparse action-value table; unseen pairs read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    actions: usize,
    rows: HashMap<StateKey, Row>,
}

impl QTable {
    pub fn new(actions: usize) -> Self {
        assert!(actions > 0, "action set must be non-empty");
        Self {
            actions,
            rows: HashMap::new(),
        }
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = StateKey> + '_ {
        self.rows.keys().copied()
    }

    pub fn value(&self, s: StateKey, a: Action) -> f64 {
        self.rows.get(&s).map_or(0.0, |r| r.values[a])
    }

    pub fn visits(&self, s: StateKey, a: Action) -> u64 {
        self.rows.get(&s).map_or(0, |r| r.visits[a])
    }

    pub fn values(&self, s: StateKey) -> Vec<f64> {
        self.rows
            .get(&s)
            .map_or_else(|| vec![0.0; self.actions], |r| r.values.clone())
    }

    /// Store a value and count it as a visit.
    pub fn set(&mut self, s: StateKey, a: Action, value: f64) {
        let n = self.actions;
        let row = self.rows.entry(s).or_insert_with(|| Row {
            values: vec![0.0; n],
            visits: vec![0; n],
        });
        row.values[a] = value;
        row.visits[a] += 1;
    }

    pub fn max_value(&self, s: StateKey) -> f64 {
        self.rows.get(&s).map_or(0.0, |r| {
            r.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
    }

    /// Argmax with ties to the lowest action id.
    pub fn greedy(&self, s: StateKey) -> Action {
        let Some(row) = self.rows.get(&s) else {
            return 0;
        };
        let mut best = 0;
        for (a, &v) in row.values.iter().enumerate().skip(1) {
            if v > row.values[best] {
                best = a;
            }
        }
        best
    }

    /// Visited (state, action, value) triples in key order.
    pub fn entries(&self) -> Vec<(StateKey, Action, f64)> {
        let mut keys: Vec<StateKey> = self.keys().collect();
        keys.sort_unstable();
        keys.into_iter()
            .flat_map(|k| {
                let row = &self.rows[&k];
                (0..self.actions)
                    .filter(move |&a| row.visits[a] > 0)
                    .map(move |a| (k, a, row.values[a]))
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|r| r.values.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
