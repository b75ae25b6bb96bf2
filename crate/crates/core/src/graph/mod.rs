//! Graph representation: directed edge lists and compressed sparse row
//! adjacency.
//!
//! A [`CsrGraph`] is a "range of ranges": an outer range over vertices and,
//! per vertex, a contiguous slice of neighbor ids. `graph[u]` yields that
//! slice, so traversal code reads the same as it would over nested vectors.

mod generate;
mod io;

use std::ops::{Index, Range};

use thiserror::Error;

pub use generate::{generate_urand, UrandRng, DEFAULT_AVG_DEGREE};
pub use io::{load_edge_list, write_edge_list, EdgeListFormat};

/// Dense vertex id in `[0, n)`.
pub type VertexId = u32;

/// Largest vertex count representable with [`VertexId`].
pub const MAX_VERTICES: usize = 1 << 32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {index} ({src}, {dst}) references a vertex outside [0, {n})")]
    VertexOutOfRange { index: usize, src: u64, dst: u64, n: usize },

    #[error("vertex count {n} exceeds the supported maximum of {MAX_VERTICES}")]
    TooManyVertices { n: u64 },

    #[error("cannot allocate graph: {0}")]
    Resource(String),

    #[error("parse error at line {line}: {message}")]
    ParseText { line: usize, message: String },

    #[error("parse error at byte {offset}: {message}")]
    ParseBinary { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Directed edge list: the ingestion form that precedes CSR construction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeList {
    pub n: usize,
    pub edges: Vec<(VertexId, VertexId)>,
}

impl EdgeList {
    /// Builds an edge list, checking that every endpoint lies in `[0, n)`.
    pub fn new(n: usize, edges: Vec<(VertexId, VertexId)>) -> Result<Self, GraphError> {
        let el = EdgeList { n, edges };
        el.validate()?;
        Ok(el)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n > MAX_VERTICES {
            return Err(GraphError::TooManyVertices { n: self.n as u64 });
        }
        for (index, &(src, dst)) in self.edges.iter().enumerate() {
            if src as usize >= self.n || dst as usize >= self.n {
                return Err(GraphError::VertexOutOfRange {
                    index,
                    src: src.into(),
                    dst: dst.into(),
                    n: self.n,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Returns an edge list containing every input edge and its reverse.
///
/// Self-loops are their own reverse and appear once per occurrence.
/// Duplicates are kept.
pub fn symmetrize(el: &EdgeList) -> Result<EdgeList, GraphError> {
    el.validate()?;
    let mut edges = Vec::with_capacity(el.edges.len() * 2);
    for &(u, v) in &el.edges {
        edges.push((u, v));
        if u != v {
            edges.push((v, u));
        }
    }
    Ok(EdgeList { n: el.n, edges })
}

/// Compressed sparse row adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    row_offsets: Vec<usize>,
    targets: Vec<VertexId>,
    directed: bool,
}

/// Builds a directed CSR graph. Neighbor slices are sorted ascending;
/// duplicate edges and self-loops are preserved.
pub fn build_csr(el: &EdgeList) -> Result<CsrGraph, GraphError> {
    el.validate()?;
    let n = el.n;
    let mut row_offsets = vec![0usize; n + 1];
    for &(u, _) in &el.edges {
        row_offsets[u as usize + 1] += 1;
    }
    for u in 0..n {
        row_offsets[u + 1] += row_offsets[u];
    }

    let mut cursor = row_offsets[..n].to_vec();
    let mut targets = vec![0 as VertexId; el.edges.len()];
    for &(u, v) in &el.edges {
        let slot = &mut cursor[u as usize];
        targets[*slot] = v;
        *slot += 1;
    }
    for u in 0..n {
        targets[row_offsets[u]..row_offsets[u + 1]].sort_unstable();
    }

    Ok(CsrGraph {
        row_offsets,
        targets,
        directed: true,
    })
}

/// Builds the undirected (symmetrized) CSR graph of `el`.
pub fn build_symmetric_csr(el: &EdgeList) -> Result<CsrGraph, GraphError> {
    let mut g = build_csr(&symmetrize(el)?)?;
    g.directed = false;
    Ok(g)
}

impl CsrGraph {
    /// Assembles a graph from raw CSR arrays, checking the offset invariants.
    pub fn from_parts(row_offsets: Vec<usize>, targets: Vec<VertexId>, directed: bool) -> Result<Self, GraphError> {
        let bad = |message: &str| GraphError::Resource(format!("invalid CSR arrays: {message}"));
        if row_offsets.first() != Some(&0) {
            return Err(bad("row_offsets must start at 0"));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(bad("row_offsets must be non-decreasing"));
        }
        if *row_offsets.last().unwrap() != targets.len() {
            return Err(bad("row_offsets must end at the edge count"));
        }
        let n = row_offsets.len() - 1;
        if let Some(index) = targets.iter().position(|&v| v as usize >= n) {
            return Err(GraphError::VertexOutOfRange {
                index,
                src: 0,
                dst: targets[index].into(),
                n,
            });
        }
        Ok(CsrGraph {
            row_offsets,
            targets,
            directed,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn targets(&self) -> &[VertexId] {
        &self.targets
    }

    #[inline]
    pub fn neighbor_range(&self, u: VertexId) -> Range<usize> {
        self.row_offsets[u as usize]..self.row_offsets[u as usize + 1]
    }

    #[inline]
    pub fn neighbors(&self, u: VertexId) -> &[VertexId] {
        &self.targets[self.neighbor_range(u)]
    }

    #[inline]
    pub fn out_degree(&self, u: VertexId) -> usize {
        self.row_offsets[u as usize + 1] - self.row_offsets[u as usize]
    }

    /// Outer range of the range-of-ranges view.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[VertexId]> + '_ {
        self.row_offsets.windows(2).map(move |w| &self.targets[w[0]..w[1]])
    }

    /// Enumerates all edges in CSR order (by source, then sorted target).
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        self.iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().map(move |&v| (u as VertexId, v)))
    }

    /// Returns whether `(u, v)` is an edge. Uses binary search on the sorted
    /// neighbor slice.
    pub fn has_edge(&self, u: VertexId, v: VertexId) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn min_out_degree(&self) -> usize {
        (0..self.num_vertices() as VertexId)
            .map(|u| self.out_degree(u))
            .min()
            .unwrap_or(0)
    }
}

impl Index<usize> for CsrGraph {
    type Output = [VertexId];

    fn index(&self, u: usize) -> &[VertexId] {
        &self.targets[self.row_offsets[u]..self.row_offsets[u + 1]]
    }
}
