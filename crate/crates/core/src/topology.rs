//! Client connectivity graph and uplink success probabilities.
//!
//! Clients are indexed `0..n`. Client-to-client links are undirected and
//! reliable; each client's uplink to the server succeeds independently with
//! probability `p[i]` in every round. The graph need not be connected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must contain at least one client")]
    Empty,
    #[error("probability vector has length {got}, expected {expected}")]
    ProbabilityLength { expected: usize, got: usize },
    #[error("edge ({a}, {b}) has an endpoint outside [0, {n})")]
    EndpointOutOfRange { a: usize, b: usize, n: usize },
    #[error("self-loop at client {0}")]
    SelfLoop(usize),
    #[error("uplink probability p[{index}] = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("client id {id} outside [0, {n})")]
    ClientOutOfRange { id: usize, n: usize },
    #[error("ring degree k = {k} requires 1 <= k and 2k < n (n = {n})")]
    InvalidRingDegree { k: usize, n: usize },
}

/// Named edge generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardTopology {
    FullyConnected,
    /// Each client is joined to its `k` nearest neighbors on either side.
    Ring(usize),
    Edgeless,
}

/// Edge list for a named topology on `n` clients.
pub fn standard_topology(kind: StandardTopology, n: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    match kind {
        StandardTopology::FullyConnected => {
            Ok((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect())
        }
        StandardTopology::Edgeless => Ok(Vec::new()),
        StandardTopology::Ring(k) => {
            if k == 0 || 2 * k >= n {
                return Err(GraphError::InvalidRingDegree { k, n });
            }
            Ok((1..=k)
                .flat_map(|hop| (0..n).map(move |i| (i, (i + hop) % n)))
                .collect())
        }
    }
}

/// Undirected client graph plus per-client uplink probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityGraph<T> {
    n: usize,
    /// Normalized `(min, max)` pairs, sorted, deduplicated.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    closed: Vec<Vec<usize>>,
    adjacency: Vec<bool>,
    p: Vec<T>,
}

impl<T: Scalar> ConnectivityGraph<T> {
    /// Validates and builds a graph. Duplicate edges (in either orientation)
    /// collapse to one.
    pub fn new(n: usize, edges: &[(usize, usize)], p: Vec<T>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if p.len() != n {
            return Err(GraphError::ProbabilityLength { expected: n, got: p.len() });
        }
        for (index, &value) in p.iter().enumerate() {
            if !(value >= T::zero() && value <= T::one()) {
                return Err(GraphError::ProbabilityOutOfRange { index, value: value.as_f64() });
            }
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::EndpointOutOfRange { a, b, n });
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        let mut adjacency = vec![false; n * n];
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &normalized {
            adjacency[a * n + b] = true;
            adjacency[b * n + a] = true;
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut closed = Vec::with_capacity(n);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            let mut c = nb.clone();
            let pos = c.partition_point(|&j| j < i);
            c.insert(pos, i);
            closed.push(c);
        }
        Ok(Self { n, edges: normalized, neighbors, closed, adjacency, p })
    }

    /// Builds a named topology with the given probabilities.
    pub fn standard(kind: StandardTopology, p: Vec<T>) -> Result<Self, GraphError> {
        let n = p.len();
        let edges = standard_topology(kind, n)?;
        Self::new(n, &edges, p)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn p(&self) -> &[T] {
        &self.p
    }

    /// Same edges, different probabilities.
    pub fn with_probabilities(&self, p: Vec<T>) -> Result<Self, GraphError> {
        Self::new(self.n, &self.edges, p)
    }

    fn check_id(&self, id: usize) -> Result<(), GraphError> {
        if id < self.n {
            Ok(())
        } else {
            Err(GraphError::ClientOutOfRange { id, n: self.n })
        }
    }

    /// `N_i`: sorted neighbors of `i`, excluding `i`.
    pub fn neighborhood(&self, i: usize) -> Result<&[usize], GraphError> {
        self.check_id(i)?;
        Ok(&self.neighbors[i])
    }

    /// `N_i ∪ {i}`, sorted.
    pub fn closed_neighborhood(&self, i: usize) -> Result<&[usize], GraphError> {
        self.check_id(i)?;
        Ok(&self.closed[i])
    }

    /// `(N_i ∪ {i}) ∩ (N_l ∪ {l})`, sorted.
    pub fn common_neighborhood(&self, i: usize, l: usize) -> Result<Vec<usize>, GraphError> {
        self.check_id(i)?;
        self.check_id(l)?;
        Ok(self.closed[i]
            .iter()
            .copied()
            .filter(|&j| self.in_closed(l, j))
            .collect())
    }

    /// Unchecked closed-neighborhood slice for inner loops. Panics on a bad id.
    #[inline]
    pub(crate) fn closed(&self, i: usize) -> &[usize] {
        &self.closed[i]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    #[inline]
    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Whether `j ∈ N_i ∪ {i}`.
    #[inline]
    pub fn in_closed(&self, i: usize, j: usize) -> bool {
        i == j || self.adjacency[i * self.n + j]
    }

    /// Whether the client graph is connected.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}
