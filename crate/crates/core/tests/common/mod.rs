//! Independent oracles and graph helpers shared by the integration tests.
#![allow(dead_code)]

pub mod contracts;

use amtgraph::graph::{CsrGraph, EdgeList, UrandRng, VertexId};

/// Power iteration with an explicit dense transition matrix. Returns the
/// ranks after each of `iters` iterations.
pub fn dense_pagerank(el: &EdgeList, alpha: f64, iters: usize) -> Vec<Vec<f64>> {
    let n = el.n;
    let mut out_deg = vec![0usize; n];
    for &(u, _) in &el.edges {
        out_deg[u as usize] += 1;
    }
    // m[v][u]: share of u's rank that flows to v.
    let mut m = vec![vec![0.0f64; n]; n];
    for &(u, v) in &el.edges {
        m[v as usize][u as usize] += 1.0 / out_deg[u as usize] as f64;
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let y: Vec<f64> = (0..n)
            .map(|v| {
                let z: f64 = m[v].iter().zip(&x).map(|(a, b)| a * b).sum();
                (1.0 - alpha) / n as f64 + alpha * z
            })
            .collect();
        x = y;
        history.push(x.clone());
    }
    history
}

/// Direct evaluation over in-neighbors:
/// `rank(u) = (1 - alpha)/n + alpha * sum_{v -> u} rank(v) / out_degree(v)`.
pub fn pull_pagerank(el: &EdgeList, alpha: f64, iters: usize) -> Vec<Vec<f64>> {
    let n = el.n;
    let mut out_deg = vec![0usize; n];
    let mut in_nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in &el.edges {
        out_deg[u as usize] += 1;
        in_nbrs[v as usize].push(u as usize);
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        x = (0..n)
            .map(|u| {
                let z: f64 = in_nbrs[u].iter().map(|&v| x[v] / out_deg[v] as f64).sum();
                (1.0 - alpha) / n as f64 + alpha * z
            })
            .collect();
        history.push(x.clone());
    }
    history
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random directed multigraph with `2..=n_max` vertices; may contain
/// self-loops, duplicates and vertices without out-edges.
pub fn random_small_graph(rng: &mut UrandRng, n_max: u64) -> EdgeList {
    let n = 2 + rng.below(n_max - 1) as usize;
    let m = rng.below(4 * n as u64 + 1) as usize;
    let edges = (0..m)
        .map(|_| (rng.below(n as u64) as VertexId, rng.below(n as u64) as VertexId))
        .collect();
    EdgeList::new(n, edges).unwrap()
}

/// Adds an edge `u -> (u + 1) mod n` for every vertex without out-edges.
pub fn with_min_out_degree_one(mut el: EdgeList) -> EdgeList {
    let mut has_out = vec![false; el.n];
    for &(u, _) in &el.edges {
        has_out[u as usize] = true;
    }
    for (u, &out) in has_out.iter().enumerate() {
        if !out {
            el.edges.push((u as VertexId, ((u + 1) % el.n) as VertexId));
        }
    }
    el
}

/// `count` distinct roots with at least one neighbor, chosen by `seed`.
pub fn pick_roots(g: &CsrGraph, count: usize, seed: u64) -> Vec<VertexId> {
    let n = g.num_vertices() as u64;
    let mut rng = UrandRng::split(seed, 0xB0F5);
    let mut roots: Vec<VertexId> = Vec::new();
    let mut attempts = 0;
    while roots.len() < count && attempts < 100 * count {
        attempts += 1;
        let v = rng.below(n) as VertexId;
        if g.out_degree(v) > 0 && !roots.contains(&v) {
            roots.push(v);
        }
    }
    roots
}
