//! Directed sensing graphs and the angle triples they induce.
//!
//! Vertices are zero-based in code; the file formats and CLI output use
//! one-based labels and convert at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed graph over vertices `0..n_vertices`. Edge `(i, j)` means
/// vertex `i` observes vertex `j`. Edges are kept sorted and deduplicated
/// so that downstream row orderings are canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(n_vertices: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &edges {
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
            }
            if i >= n_vertices || j >= n_vertices {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n_vertices} vertices"
                )));
            }
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(Error::InvalidGraph("duplicate edge".into()));
        }
        Ok(Self { n_vertices, edges })
    }

    /// Complete directed graph: every ordered pair is an edge.
    pub fn complete(n_vertices: usize) -> Self {
        let mut edges = Vec::with_capacity(n_vertices * n_vertices.saturating_sub(1));
        for i in 0..n_vertices {
            for j in 0..n_vertices {
                if i != j {
                    edges.push((i, j));
                }
            }
        }
        Self { n_vertices, edges }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Out-neighbors of `i` in ascending order.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(a, _)| a == i)
            .map(|&(_, b)| b)
            .collect()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, _)| a == i).count()
    }

    /// Vertices that observe `i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, b)| b == i)
            .map(|&(a, _)| a)
            .collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i, j)).is_ok()
    }
}

/// The ordered angle triples `(i, j, k)` with `{j, k}` both observed by `i`
/// and `j < k`, sorted lexicographically. This is exactly the set induced by
/// an edge set, which is why construction goes through [`angle_set`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngleSet {
    triples: Vec<(usize, usize, usize)>,
}

impl AngleSet {
    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Index of a triple in row order, accepting either neighbor order.
    pub fn index_of(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        let (a, b) = if j < k { (j, k) } else { (k, j) };
        self.triples.binary_search(&(i, a, b)).ok()
    }
}

/// All angle triples induced by the edge set: one triple per unordered pair
/// of out-neighbors of each vertex.
pub fn angle_set(graph: &DirectedGraph) -> AngleSet {
    let mut triples = Vec::new();
    for i in 0..graph.n_vertices() {
        let nbrs = graph.out_neighbors(i);
        for a in 0..nbrs.len() {
            for b in (a + 1)..nbrs.len() {
                triples.push((i, nbrs[a], nbrs[b]));
            }
        }
    }
    // Out-neighbors come back ascending, so triples are already lexicographic;
    // sort anyway to keep the invariant independent of that detail.
    triples.sort_unstable();
    AngleSet { triples }
}
