//! Sequential BFS and parent-tree checks.

use std::collections::VecDeque;

use thiserror::Error;

use super::BfsError;
use crate::graph::{CsrGraph, VertexId};

/// Single-threaded BFS: a FIFO frontier, each vertex claimed by the first
/// neighbor that reaches it. Unreachable vertices keep parent `-1`.
pub fn bfs_sequential(g: &CsrGraph, root: VertexId) -> Result<Vec<i64>, BfsError> {
    let n = g.num_vertices();
    if root as usize >= n {
        return Err(BfsError::RootOutOfRange { root, n });
    }
    let mut parents = vec![-1i64; n];
    parents[root as usize] = root as i64;
    let mut q = VecDeque::from([root]);
    while let Some(u) = q.pop_front() {
        for &v in g.neighbors(u) {
            if parents[v as usize] == -1 {
                parents[v as usize] = u as i64;
                q.push_back(v);
            }
        }
    }
    Ok(parents)
}

/// Hop distances from `root`, `-1` where unreachable. Used as the level
/// oracle.
pub fn bfs_levels(g: &CsrGraph, root: VertexId) -> Result<Vec<i64>, BfsError> {
    let parents = bfs_sequential(g, root)?;
    levels_from_parents(&parents, root).map_err(BfsError::InvalidTree)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("root {root} has parent {found}, expected itself")]
    RootNotSelfParent { root: VertexId, found: i64 },

    #[error("vertex {vertex} has invalid parent {parent}")]
    InvalidParent { vertex: usize, parent: i64 },

    #[error("parent edge ({parent}, {vertex}) is not in the graph")]
    MissingEdge { parent: VertexId, vertex: usize },

    #[error("parent chain from vertex {vertex} does not reach the root")]
    Cycle { vertex: usize },

    #[error("parents array has length {found}, graph has {expected} vertices")]
    LengthMismatch { expected: usize, found: usize },
}

/// Levels induced by following parent pointers to `root`.
pub fn levels_from_parents(parents: &[i64], root: VertexId) -> Result<Vec<i64>, TreeError> {
    let n = parents.len();
    let r = root as usize;
    if r >= n || parents[r] != root as i64 {
        return Err(TreeError::RootNotSelfParent {
            root,
            found: parents.get(r).copied().unwrap_or(-1),
        });
    }
    const UNKNOWN: i64 = -2;
    let mut levels = vec![UNKNOWN; n];
    levels[r] = 0;
    let mut chain = Vec::new();
    for start in 0..n {
        if levels[start] != UNKNOWN {
            continue;
        }
        if parents[start] == -1 {
            levels[start] = -1;
            continue;
        }
        // Walk up until a vertex with a known level.
        let mut v = start;
        chain.clear();
        while levels[v] == UNKNOWN {
            let p = parents[v];
            if p < 0 || p as usize >= n {
                return Err(TreeError::InvalidParent { vertex: v, parent: p });
            }
            chain.push(v);
            if chain.len() > n {
                return Err(TreeError::Cycle { vertex: start });
            }
            v = p as usize;
        }
        let base = levels[v];
        if base < 0 {
            // Parent chain ends at an unreachable vertex.
            return Err(TreeError::InvalidParent {
                vertex: *chain.last().unwrap(),
                parent: v as i64,
            });
        }
        for (k, &c) in chain.iter().rev().enumerate() {
            levels[c] = base + k as i64 + 1;
        }
    }
    Ok(levels)
}

/// Checks that `parents` is a tree rooted at `root` whose parent edges all
/// exist in `g`. Returns the induced levels.
pub fn validate_tree(g: &CsrGraph, parents: &[i64], root: VertexId) -> Result<Vec<i64>, TreeError> {
    if parents.len() != g.num_vertices() {
        return Err(TreeError::LengthMismatch {
            expected: g.num_vertices(),
            found: parents.len(),
        });
    }
    let levels = levels_from_parents(parents, root)?;
    for (v, &p) in parents.iter().enumerate() {
        if v == root as usize || p < 0 {
            continue;
        }
        if !g.has_edge(p as VertexId, v as VertexId) {
            return Err(TreeError::MissingEdge {
                parent: p as VertexId,
                vertex: v,
            });
        }
    }
    Ok(levels)
}

/// Number of positions where two level arrays differ.
pub fn count_mismatches(a: &[i64], b: &[i64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}
