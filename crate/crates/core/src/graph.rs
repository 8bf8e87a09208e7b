//! Binary prerequisite graphs over skills.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square binary matrix; entry `(i, k)` set means skill `k` is a
/// prerequisite of skill `i`, i.e. a directed edge `k → i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<bool>,
}

/// Outcome of a topological sort.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DagCheck {
    /// Nodes in an order where every prerequisite precedes its dependents.
    Acyclic(Vec<usize>),
    /// A directed cycle `[v0, v1, …, v0]` following edge direction.
    Cyclic(Vec<usize>),
}

impl DagCheck {
    pub fn is_dag(&self) -> bool {
        matches!(self, DagCheck::Acyclic(_))
    }
}

impl AdjacencyMatrix {
    pub fn empty(n: usize) -> Self {
        AdjacencyMatrix {
            n,
            bits: vec![false; n * n],
        }
    }

    /// Builds from `(src, dst)` pairs meaning `src` is a prerequisite of `dst`.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut a = Self::empty(n);
        for (src, dst) in edges {
            if src >= n || dst >= n {
                return Err(Error::Domain {
                    op: "adjacency",
                    reason: format!("edge {src}->{dst} out of range for {n} skills"),
                });
            }
            a.add_edge(src, dst);
        }
        Ok(a)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Entry `(i, k)`: is `k` a prerequisite of `i`?
    #[inline]
    pub fn get(&self, i: usize, k: usize) -> bool {
        self.bits[i * self.n + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, value: bool) {
        self.bits[i * self.n + k] = value;
    }

    #[inline]
    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.get(dst, src)
    }

    pub fn add_edge(&mut self, src: usize, dst: usize) {
        self.set(dst, src, true);
    }

    pub fn clear_diagonal(&mut self) {
        for i in 0..self.n {
            self.set(i, i, false);
        }
    }

    pub fn num_edges(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `(src, dst)` pairs sorted by source then destination.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for src in 0..self.n {
            for dst in 0..self.n {
                if self.has_edge(src, dst) {
                    out.push((src, dst));
                }
            }
        }
        out
    }

    /// Row-major `0/1` bytes, row `i` listing the prerequisites of skill `i`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn from_bytes(n: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != n * n {
            return Err(Error::Dimension {
                op: "adjacency",
                lhs: (n, n),
                rhs: (bytes.len(), 1),
            });
        }
        Ok(AdjacencyMatrix {
            n,
            bits: bytes.iter().map(|&b| b != 0).collect(),
        })
    }

    /// Relabels nodes: node `i` of `self` becomes node `map[i]`.
    pub fn relabel(&self, map: &[usize]) -> Self {
        let mut out = Self::empty(self.n);
        for (src, dst) in self.edges() {
            out.add_edge(map[src], map[dst]);
        }
        out
    }

    /// Kahn's algorithm, picking the smallest ready node first.
    pub fn topological_sort(&self) -> DagCheck {
        let n = self.n;
        let mut indegree: Vec<usize> = (0..n)
            .map(|i| (0..n).filter(|&k| self.get(i, k)).count())
            .collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for (dst, deg) in indegree.iter_mut().enumerate() {
                if self.has_edge(v, dst) {
                    *deg -= 1;
                    if *deg == 0 {
                        ready.push(Reverse(dst));
                    }
                }
            }
        }
        if order.len() == n {
            DagCheck::Acyclic(order)
        } else {
            DagCheck::Cyclic(self.find_cycle(&indegree))
        }
    }

    pub fn is_dag(&self) -> bool {
        self.topological_sort().is_dag()
    }

    // Every node left with positive indegree after Kahn has a predecessor that
    // also remains, so walking predecessors must revisit a node.
    fn find_cycle(&self, indegree: &[usize]) -> Vec<usize> {
        let n = self.n;
        let start = (0..n).find(|&v| indegree[v] > 0).expect("cyclic graph has a leftover node");
        let mut pos = vec![usize::MAX; n];
        let mut walk = Vec::new();
        let mut v = start;
        while pos[v] == usize::MAX {
            pos[v] = walk.len();
            walk.push(v);
            v = (0..n)
                .find(|&k| self.get(v, k) && indegree[k] > 0)
                .expect("leftover node has a leftover predecessor");
        }
        // walk[pos[v]..] follows predecessor links; reverse to follow edges.
        let mut cycle: Vec<usize> = walk[pos[v]..].to_vec();
        cycle.reverse();
        cycle.push(cycle[0]);
        cycle
    }
}
