//! Single-threaded PageRank.

use super::{PageRankError, PageRankParams};
use crate::graph::CsrGraph;

/// One push iteration in ascending source order. Returns the new ranks and
/// the L1 change. Vertices without out-edges contribute nothing.
pub fn pagerank_step(g: &CsrGraph, ranks: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let n = g.num_vertices();
    let mut contrib = vec![0.0f64; n];
    for (u, nbrs) in g.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let c = ranks[u] / nbrs.len() as f64;
        for &v in nbrs {
            contrib[v as usize] += c;
        }
    }
    let base = (1.0 - alpha) / n as f64;
    let mut delta = 0.0;
    let next: Vec<f64> = contrib
        .iter()
        .zip(ranks)
        .map(|(z, old)| {
            let new = base + alpha * z;
            delta += (new - old).abs();
            new
        })
        .collect();
    (next, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialPageRank {
    pub ranks: Vec<f64>,
    pub iterations: usize,
    /// Final L1 change.
    pub error: f64,
    /// L1 change after each iteration.
    pub errors: Vec<f64>,
}

/// Iterates from uniform `1/n` until the L1 change drops below the
/// tolerance or `max_iters` is reached.
pub fn pagerank_sequential(g: &CsrGraph, params: &PageRankParams) -> Result<SequentialPageRank, PageRankError> {
    params.validate()?;
    let n = g.num_vertices();
    if n == 0 {
        return Err(PageRankError::EmptyGraph);
    }
    let mut ranks = vec![1.0 / n as f64; n];
    let mut errors = Vec::new();
    for _ in 0..params.max_iters {
        let (next, delta) = pagerank_step(g, &ranks, params.alpha);
        ranks = next;
        errors.push(delta);
        if delta < params.tolerance {
            break;
        }
    }
    Ok(SequentialPageRank {
        iterations: errors.len(),
        error: *errors.last().unwrap(),
        errors,
        ranks,
    })
}
