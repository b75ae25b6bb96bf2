//! Distributed PageRank.
//!
//! Each iteration has three barrier-separated phases:
//!
//! 1. accumulation: every locality pushes `rank[u] / out_degree[u]` along
//!    the out-edges of the vertices it owns, adding directly into `contrib`
//!    for local targets and sending a `PR_CONTRIB` action for remote ones
//!    (in batch mode, remote contributions are first summed per target and
//!    sent as one `PR_CONTRIB_BATCH` per owner);
//! 2. update: `rank[i] = (1 - alpha) / n + alpha * contrib[i]`, after which
//!    `contrib[i]` is cleared;
//! 3. error: the L1 change is summed across localities through locality 0;
//!    this reduction is also the barrier that ends the iteration.
//!
//! Vertices with no out-edges push nothing, so on graphs that have them the
//! ranks sum to less than one.

mod reference;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use reference::{pagerank_sequential, pagerank_step, SequentialPageRank};

use crate::graph::{CsrGraph, VertexId};
use crate::runtime::{
    wait_all, ActionTag, CompletionHandle, Ctx, Driver, LocalityId, PartitionedVector, Runtime, RuntimeBuilder,
    RuntimeConfig, RuntimeError,
};

/// Accumulates contributions from a range of locally owned sources.
pub const PR_ACCUMULATE: ActionTag = ActionTag(0x20);
/// Adds one contribution at the owner of the target.
pub const PR_CONTRIB: ActionTag = ActionTag(0x21);
pub const PR_CONTRIB_BATCH: ActionTag = ActionTag(0x22);

const CONTRIB_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PageRankError {
    #[error("PageRank needs at least one vertex")]
    EmptyGraph,

    #[error("invalid PageRank parameters: {0}")]
    InvalidParams(String),

    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankParams {
    pub alpha: f64,
    /// Stop once the L1 change of an iteration is below this.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for PageRankParams {
    fn default() -> Self {
        PageRankParams {
            alpha: 0.85,
            tolerance: 1e-4,
            max_iters: 100,
        }
    }
}

impl PageRankParams {
    pub fn validate(&self) -> Result<(), PageRankError> {
        let bad = |m: String| Err(PageRankError::InvalidParams(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return bad(format!(
                "tolerance must be finite and non-negative, got {}",
                self.tolerance
            ));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PageRankOptions {
    /// Coalesce remote contributions per destination per accumulation task.
    pub batch: bool,
    /// Keep a copy of the ranks after every iteration.
    pub record_history: bool,
}

#[derive(Debug, Clone)]
pub struct PageRankResult {
    pub ranks: Vec<f64>,
    pub iterations: usize,
    pub error: f64,
    /// Global L1 change after each iteration.
    pub errors: Vec<f64>,
    /// Sum of all ranks after each iteration.
    pub masses: Vec<f64>,
    /// Ranks after each iteration, when requested.
    pub history: Option<Vec<Vec<f64>>>,
    pub elapsed: Duration,
}

impl PageRankResult {
    /// Largest per-component relative difference to `reference`.
    pub fn max_relative_diff(&self, reference: &[f64]) -> f64 {
        relative_diff(&self.ranks, reference)
    }

    /// The `k` highest-ranked vertices, ties broken by vertex id.
    pub fn top(&self, k: usize) -> Vec<(VertexId, f64)> {
        let mut idx: Vec<usize> = (0..self.ranks.len()).collect();
        idx.sort_by(|&a, &b| self.ranks[b].total_cmp(&self.ranks[a]).then(a.cmp(&b)));
        idx.into_iter()
            .take(k)
            .map(|i| (i as VertexId, self.ranks[i]))
            .collect()
    }
}

/// `max_i |a_i - b_i| / max(|b_i|, tiny)`; infinite on length mismatch.
pub fn relative_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

struct Shared {
    graph: Arc<CsrGraph>,
    ranks: PartitionedVector<f64>,
    contrib: PartitionedVector<f64>,
    degrees: PartitionedVector<i64>,
    batch: bool,
    // Batch mode only: per hosted locality, partial sums for remote targets
    // (f64 bits), sent once per iteration after local accumulation.
    ghosts: Vec<Option<Box<[AtomicU64]>>>,
}

/// PageRank state and actions registered on a runtime.
#[derive(Clone)]
pub struct DistributedPageRank {
    shared: Arc<Shared>,
    record_history: bool,
}

impl DistributedPageRank {
    pub fn register(
        b: &mut RuntimeBuilder,
        graph: Arc<CsrGraph>,
        opts: PageRankOptions,
    ) -> Result<Self, PageRankError> {
        let n = graph.num_vertices();
        if n == 0 {
            return Err(PageRankError::EmptyGraph);
        }
        let shared = Arc::new(Shared {
            ranks: b.vector(n, 0.0),
            contrib: b.vector(n, 0.0),
            degrees: b.vector(n, 0i64),
            ghosts: (0..b.localities())
                .map(|k| {
                    (opts.batch && b.hosted().contains(&LocalityId(k as u32)))
                        .then(|| (0..n).map(|_| AtomicU64::new(0)).collect())
                })
                .collect(),
            graph,
            batch: opts.batch,
        });
        let s = Arc::clone(&shared);
        b.register(PR_ACCUMULATE, move |ctx, p| {
            if p.len() != 16 {
                return Err(RuntimeError::Protocol("PR_ACCUMULATE payload".into()));
            }
            let start = u64::from_le_bytes(p[0..8].try_into().unwrap()) as usize;
            let end = u64::from_le_bytes(p[8..16].try_into().unwrap()) as usize;
            s.accumulate(ctx, start, end)?;
            Ok(Vec::new())
        })?;
        let s = Arc::clone(&shared);
        b.register(PR_CONTRIB, move |ctx, p| {
            let (v, c) = decode_contrib(p)?;
            s.contrib.atomic_add(ctx, v as usize, c)?;
            Ok(Vec::new())
        })?;
        let s = Arc::clone(&shared);
        b.register(PR_CONTRIB_BATCH, move |ctx, p| {
            if p.len() % CONTRIB_LEN != 0 {
                return Err(RuntimeError::Protocol("ragged PR_CONTRIB batch".into()));
            }
            for chunk in p.chunks_exact(CONTRIB_LEN) {
                let (v, c) = decode_contrib(chunk)?;
                s.contrib.atomic_add(ctx, v as usize, c)?;
            }
            Ok(Vec::new())
        })?;
        Ok(DistributedPageRank {
            shared,
            record_history: opts.record_history,
        })
    }

    pub fn ranks(&self) -> &PartitionedVector<f64> {
        &self.shared.ranks
    }

    pub fn contrib(&self) -> &PartitionedVector<f64> {
        &self.shared.contrib
    }

    /// SPMD body. Localities with `collect` set gather and return the
    /// result; the others return `None`.
    pub fn run(
        &self,
        driver: &Driver,
        params: &PageRankParams,
        collect: bool,
    ) -> Result<Option<PageRankResult>, PageRankError> {
        params.validate()?;
        let s = &self.shared;
        let ctx = driver.ctx();
        let n = s.graph.num_vertices();
        let local = s.ranks.local_range(&ctx);
        for i in local.clone() {
            s.ranks.store(&ctx, i, 1.0 / n as f64)?;
            s.contrib.store(&ctx, i, 0.0)?;
            s.degrees.store(&ctx, i, s.graph.out_degree(i as VertexId) as i64)?;
        }

        let chunks = split(local.clone(), driver.workers() * 4);
        let base = (1.0 - params.alpha) / n as f64;
        let mut errors = Vec::new();
        let mut masses = Vec::new();
        let mut history = (collect && self.record_history).then(Vec::new);
        let start = Instant::now();
        driver.barrier()?;
        loop {
            // Phase 1: contribution accumulation.
            let mut handles = Vec::with_capacity(chunks.len());
            for &(a, b) in &chunks {
                let mut p = Vec::with_capacity(16);
                p.extend_from_slice(&(a as u64).to_le_bytes());
                p.extend_from_slice(&(b as u64).to_le_bytes());
                handles.push(driver.remote_action(driver.here(), PR_ACCUMULATE, p)?);
            }
            let mut accumulated = wait_all(&handles);
            if accumulated.is_ok() && s.batch {
                accumulated = s.flush_ghosts(driver).and_then(|h| wait_all(&h));
            }
            driver.barrier()?;
            accumulated?;

            // Phase 2: rank update.
            let (delta, mass) = s.update(&ctx, local.clone(), base, params.alpha)?;

            // Phase 3: error computation.
            let sums = driver.all_reduce_sum(&[delta, mass])?;
            errors.push(sums[0]);
            masses.push(sums[1]);
            // Every update finished before the reduction did, and no rank
            // changes again until everyone has passed the next accumulation
            // barrier, so the reduction also closes the iteration.
            if let Some(h) = history.as_mut() {
                h.push(s.ranks.gather(&ctx)?);
            }

            if sums[0] < params.tolerance || errors.len() >= params.max_iters {
                break;
            }
        }
        let elapsed = start.elapsed();

        let result = if collect {
            Some(PageRankResult {
                ranks: s.ranks.gather(&ctx)?,
                iterations: errors.len(),
                error: *errors.last().unwrap(),
                errors,
                masses,
                history,
                elapsed,
            })
        } else {
            None
        };
        driver.barrier()?;
        Ok(result)
    }
}

impl Shared {
    fn accumulate(&self, ctx: &Ctx<'_>, start: usize, end: usize) -> Result<(), RuntimeError> {
        let local = self.contrib.local_range(ctx);
        let ghosts = self.ghosts[ctx.here().index()].as_deref();
        for u in start..end {
            let deg = self.degrees.load(ctx, u)?;
            if deg == 0 {
                continue;
            }
            let c = self.ranks.load(ctx, u)? / deg as f64;
            for &v in self.graph.neighbors(u as VertexId) {
                if local.contains(&(v as usize)) {
                    self.contrib.atomic_add(ctx, v as usize, c)?;
                } else if let Some(ghosts) = ghosts {
                    add_f64(&ghosts[v as usize], c);
                } else {
                    let mut p = Vec::with_capacity(CONTRIB_LEN);
                    encode_contrib(v, c, &mut p);
                    ctx.remote_action(self.contrib.owner(v as usize), PR_CONTRIB, p)?;
                }
            }
        }
        Ok(())
    }

    /// Sends the combined remote contributions as one batch per owner and
    /// clears them.
    fn flush_ghosts(&self, driver: &Driver) -> Result<Vec<CompletionHandle>, RuntimeError> {
        let Some(ghosts) = self.ghosts[driver.here().index()].as_deref() else {
            return Ok(Vec::new());
        };
        let mut handles = Vec::new();
        for k in 0..driver.localities() {
            let k = LocalityId(k as u32);
            if k == driver.here() {
                continue;
            }
            let mut buf = Vec::new();
            for v in self.contrib.map().range(k) {
                let bits = ghosts[v].swap(0, Ordering::Relaxed);
                if bits != 0 {
                    encode_contrib(v as VertexId, f64::from_bits(bits), &mut buf);
                }
            }
            if !buf.is_empty() {
                handles.push(driver.remote_action(k, PR_CONTRIB_BATCH, buf)?);
            }
        }
        Ok(handles)
    }

    /// Returns the local L1 change and the local rank sum.
    fn update(
        &self,
        ctx: &Ctx<'_>,
        local: std::ops::Range<usize>,
        base: f64,
        alpha: f64,
    ) -> Result<(f64, f64), RuntimeError> {
        let mut delta = 0.0;
        let mut mass = 0.0;
        for i in local {
            let old = self.ranks.load(ctx, i)?;
            let new = base + alpha * self.contrib.load(ctx, i)?;
            delta += (new - old).abs();
            mass += new;
            self.ranks.store(ctx, i, new)?;
            self.contrib.store(ctx, i, 0.0)?;
        }
        Ok((delta, mass))
    }
}

fn add_f64(cell: &AtomicU64, x: f64) {
    let mut cur = cell.load(Ordering::Relaxed);
    loop {
        let new = (f64::from_bits(cur) + x).to_bits();
        match cell.compare_exchange_weak(cur, new, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

fn encode_contrib(v: VertexId, c: f64, out: &mut Vec<u8>) {
    out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
}

fn decode_contrib(p: &[u8]) -> Result<(VertexId, f64), RuntimeError> {
    if p.len() != CONTRIB_LEN {
        return Err(RuntimeError::Protocol(format!(
            "PR_CONTRIB payload of {} bytes",
            p.len()
        )));
    }
    Ok((
        u32::from_le_bytes(p[0..4].try_into().unwrap()),
        f64::from_le_bytes(p[4..12].try_into().unwrap()),
    ))
}

/// Splits `r` into at most `parts` contiguous, non-empty pieces.
fn split(r: std::ops::Range<usize>, parts: usize) -> Vec<(usize, usize)> {
    let len = r.len();
    if len == 0 {
        return Vec::new();
    }
    let parts = parts.clamp(1, len);
    (0..parts)
        .map(|k| (r.start + k * len / parts, r.start + (k + 1) * len / parts))
        .collect()
}

/// Starts a runtime for `config` and runs PageRank, returning the result
/// gathered on the first hosted locality.
pub fn run_pagerank(
    config: RuntimeConfig,
    graph: Arc<CsrGraph>,
    params: &PageRankParams,
    opts: PageRankOptions,
) -> Result<PageRankResult, PageRankError> {
    params.validate()?;
    let mut b = RuntimeBuilder::new(config)?;
    let pr = DistributedPageRank::register(&mut b, graph, opts)?;
    let rt = b.start()?;
    run_on(&rt, &pr, params)
}

/// Runs PageRank on an already started runtime.
pub fn run_on(
    rt: &Runtime,
    pr: &DistributedPageRank,
    params: &PageRankParams,
) -> Result<PageRankResult, PageRankError> {
    let collector = rt.hosted()[0];
    let mut result = None;
    for r in rt.run_spmd(|d| pr.run(d, params, d.here() == collector)) {
        if let Some(x) = r? {
            result = Some(x);
        }
    }
    Ok(result.expect("collector returns a result"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_csr, EdgeList};

    fn directed(n: usize, edges: &[(u32, u32)]) -> Arc<CsrGraph> {
        Arc::new(build_csr(&EdgeList::new(n, edges.to_vec()).unwrap()).unwrap())
    }

    fn cfg(l: usize) -> RuntimeConfig {
        RuntimeConfig::new(l).with_workers(2)
    }

    #[test]
    fn params_validation() {
        assert!(PageRankParams::default().validate().is_ok());
        for p in [
            PageRankParams {
                alpha: 1.0,
                ..Default::default()
            },
            PageRankParams {
                alpha: 0.0,
                ..Default::default()
            },
            PageRankParams {
                tolerance: -1.0,
                ..Default::default()
            },
            PageRankParams {
                tolerance: f64::NAN,
                ..Default::default()
            },
            PageRankParams {
                max_iters: 0,
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn split_covers_range() {
        assert_eq!(split(3..10, 3), [(3, 5), (5, 7), (7, 10)]);
        assert_eq!(split(0..2, 8), [(0, 1), (1, 2)]);
        assert!(split(4..4, 3).is_empty());
    }

    #[test]
    fn two_cycle_on_two_localities() {
        let r = run_pagerank(
            cfg(2),
            directed(2, &[(0, 1), (1, 0)]),
            &PageRankParams::default(),
            Default::default(),
        )
        .unwrap();
        assert_eq!(r.ranks, [0.5, 0.5]);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.error, 0.0);
    }

    #[test]
    fn isolated_vertices_get_base_score() {
        let r = run_pagerank(
            cfg(2),
            directed(4, &[]),
            &PageRankParams {
                max_iters: 1,
                ..Default::default()
            },
            Default::default(),
        )
        .unwrap();
        assert!(r.ranks.iter().all(|&x| (x - 0.0375).abs() < 1e-15));
    }

    #[test]
    fn matches_sequential_on_chain() {
        let g = directed(3, &[(0, 1), (1, 2)]);
        let params = PageRankParams {
            tolerance: 1e-13,
            max_iters: 1000,
            ..Default::default()
        };
        let seq = pagerank_sequential(&g, &params).unwrap();
        for l in [1, 2, 3] {
            for batch in [false, true] {
                let r = run_pagerank(
                    cfg(l),
                    g.clone(),
                    &params,
                    PageRankOptions {
                        batch,
                        ..Default::default()
                    },
                )
                .unwrap();
                assert_eq!(r.iterations, seq.iterations);
                assert!(r.max_relative_diff(&seq.ranks) < 1e-12);
            }
        }
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(matches!(
            run_pagerank(cfg(1), directed(0, &[]), &PageRankParams::default(), Default::default()),
            Err(PageRankError::EmptyGraph)
        ));
    }

    #[test]
    fn top_orders_by_rank_then_id() {
        let r = PageRankResult {
            ranks: vec![0.1, 0.3, 0.3, 0.2],
            iterations: 1,
            error: 0.0,
            errors: vec![],
            masses: vec![],
            history: None,
            elapsed: Duration::ZERO,
        };
        assert_eq!(r.top(3), [(1, 0.3), (2, 0.3), (3, 0.2)]);
    }
}
