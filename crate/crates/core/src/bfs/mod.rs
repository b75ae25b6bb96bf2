//! Distributed asynchronous breadth-first search.
//!
//! The owner of the root receives the first expansion. Each expansion
//! claims its vertex and then drains a local frontier round by round:
//! neighbors owned locally are claimed in place, neighbors owned elsewhere
//! get a `BFS_EXPAND` action at their owner. Completion is the ack tree of
//! the first action, so the driver only waits on one handle.
//!
//! A claim installs a parent with compare-and-swap on `parents` (`-1` means
//! unvisited) and records the claim's level next to it. Without a global
//! level barrier a longer path can reach a vertex before a shorter one. When
//! a strictly shorter path arrives later, the vertex is re-parented and
//! expanded again, so final levels always equal hop distances.

mod reference;

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

pub use reference::{bfs_levels, bfs_sequential, count_mismatches, levels_from_parents, validate_tree, TreeError};

use crate::graph::{CsrGraph, VertexId};
use crate::runtime::{
    ActionTag, Ctx, Driver, LocalityId, PartitionedVector, Runtime, RuntimeBuilder, RuntimeConfig, RuntimeError,
};

pub const BFS_EXPAND: ActionTag = ActionTag(0x10);
pub const BFS_EXPAND_BATCH: ActionTag = ActionTag(0x11);
const NOT_SENT: u32 = u32::MAX;

const UNSET: i64 = i64::MAX;
// Marks a level cell whose (parent, level) pair is being rewritten.
const LOCKED: i64 = -2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BfsError {
    #[error("root {root} out of range for {n} vertices")]
    RootOutOfRange { root: VertexId, n: usize },

    #[error("BFS requires a symmetrized graph")]
    DirectedGraph,

    #[error("invalid BFS tree: {0}")]
    InvalidTree(TreeError),

    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// Request to claim `source` with `parent` at hop distance `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BfsExpandMsg {
    pub source: VertexId,
    pub parent: VertexId,
    pub level: u64,
}

impl BfsExpandMsg {
    pub const WIRE_LEN: usize = 16;

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.source.to_le_bytes());
        out.extend_from_slice(&self.parent.to_le_bytes());
        out.extend_from_slice(&self.level.to_le_bytes());
    }

    pub fn decode(b: &[u8]) -> Result<Self, RuntimeError> {
        if b.len() != Self::WIRE_LEN {
            return Err(RuntimeError::Protocol(format!(
                "BFS_EXPAND payload of {} bytes",
                b.len()
            )));
        }
        Ok(BfsExpandMsg {
            source: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            parent: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            level: u64::from_le_bytes(b[8..16].try_into().unwrap()),
        })
    }
}

/// Outcome of [`DistributedBfs::set_parent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    /// First visit: parent went from `-1` to the claimant.
    Claimed,
    /// Already visited at a larger level; parent and level were lowered.
    Relaxed,
    Rejected,
}

impl Claim {
    pub fn accepted(self) -> bool {
        self != Claim::Rejected
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BfsOptions {
    /// Coalesce remote expansions per destination per local round.
    pub batch: bool,
    /// Record every parent write for inspection by tests.
    pub audit: bool,
}

/// Counters for the localities hosted in this process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BfsStats {
    /// Remote actions sent (one per batch in batch mode).
    pub remote_messages: u64,
    /// Expansion requests carried by those actions.
    pub remote_expansions: u64,
    pub claims: u64,
    pub relaxations: u64,
}

#[derive(Default)]
struct Counters {
    remote_messages: AtomicU64,
    remote_expansions: AtomicU64,
    claims: AtomicU64,
    relaxations: AtomicU64,
}

impl Counters {
    fn reset(&self) {
        for c in [
            &self.remote_messages,
            &self.remote_expansions,
            &self.claims,
            &self.relaxations,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

/// One parent write, recorded while the vertex is locked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRecord {
    pub vertex: VertexId,
    pub old_parent: i64,
    pub new_parent: i64,
    /// `None` before the first claim.
    pub old_level: Option<u64>,
    pub new_level: u64,
}

#[derive(Debug, Clone)]
pub struct BfsResult {
    pub root: VertexId,
    /// Parent per vertex, `-1` where unreachable.
    pub parents: Vec<i64>,
    /// Level per vertex as recorded by the claims, `-1` where unreachable.
    pub levels: Vec<i64>,
    pub stats: BfsStats,
    /// Traversal time, excluding initialization and result collection.
    pub elapsed: Duration,
}

impl BfsResult {
    pub fn reachable(&self) -> usize {
        self.levels.iter().filter(|&&l| l >= 0).count()
    }

    /// Vertex count per level, index = level.
    pub fn level_histogram(&self) -> Vec<usize> {
        let mut h = Vec::new();
        for &l in self.levels.iter().filter(|&&l| l >= 0) {
            let l = l as usize;
            if h.len() <= l {
                h.resize(l + 1, 0);
            }
            h[l] += 1;
        }
        h
    }

    /// Checks the parent tree against `g` and returns the number of
    /// vertices whose level differs from the sequential oracle (also
    /// counting disagreement between recorded and parent-induced levels).
    pub fn verify(&self, g: &CsrGraph) -> Result<usize, BfsError> {
        let induced = validate_tree(g, &self.parents, self.root).map_err(BfsError::InvalidTree)?;
        let oracle = bfs_levels(g, self.root)?;
        let mut bad = count_mismatches(&induced, &oracle);
        bad += count_mismatches(&self.levels, &oracle);
        Ok(bad)
    }
}

struct Shared {
    graph: Arc<CsrGraph>,
    parents: PartitionedVector<i64>,
    levels: PartitionedVector<i64>,
    batch: bool,
    counters: Vec<Counters>,
    audit: Option<Mutex<Vec<AuditRecord>>>,
    // Batch mode only: per hosted locality, the lowest level at which an
    // expansion of each vertex has already been sent from there.
    sent: Vec<Option<Box<[AtomicU32]>>>,
    // Batch mode only: claimed vertices waiting for the locality's drainer.
    frontier: Vec<Mutex<Frontier>>,
}

#[derive(Default)]
struct Frontier {
    pending: Vec<(VertexId, u64)>,
    draining: bool,
}

/// BFS state and actions registered on a runtime.
#[derive(Clone)]
pub struct DistributedBfs {
    shared: Arc<Shared>,
}

impl DistributedBfs {
    /// Allocates the parent and level vectors and registers the expansion
    /// actions. `graph` must be symmetrized.
    pub fn register(b: &mut RuntimeBuilder, graph: Arc<CsrGraph>, opts: BfsOptions) -> Result<Self, BfsError> {
        if graph.is_directed() {
            return Err(BfsError::DirectedGraph);
        }
        let n = graph.num_vertices();
        let shared = Arc::new(Shared {
            parents: b.vector(n, -1i64),
            levels: b.vector(n, UNSET),
            graph,
            batch: opts.batch,
            counters: (0..b.localities()).map(|_| Counters::default()).collect(),
            audit: opts.audit.then(|| Mutex::new(Vec::new())),
            sent: (0..b.localities())
                .map(|k| {
                    (opts.batch && b.hosted().contains(&LocalityId(k as u32)))
                        .then(|| (0..n).map(|_| AtomicU32::new(NOT_SENT)).collect())
                })
                .collect(),
            frontier: (0..b.localities()).map(|_| Mutex::new(Frontier::default())).collect(),
        });
        let s = Arc::clone(&shared);
        b.register(BFS_EXPAND, move |ctx, payload| {
            let msg = BfsExpandMsg::decode(payload)?;
            s.local_expand(ctx, &[msg])?;
            Ok(Vec::new())
        })?;
        let s = Arc::clone(&shared);
        b.register(BFS_EXPAND_BATCH, move |ctx, payload| {
            if payload.len() % BfsExpandMsg::WIRE_LEN != 0 {
                return Err(RuntimeError::Protocol("ragged BFS batch".into()));
            }
            let msgs = payload
                .chunks_exact(BfsExpandMsg::WIRE_LEN)
                .map(BfsExpandMsg::decode)
                .collect::<Result<Vec<_>, _>>()?;
            s.local_expand(ctx, &msgs)?;
            Ok(Vec::new())
        })?;
        Ok(DistributedBfs { shared })
    }

    pub fn parents(&self) -> &PartitionedVector<i64> {
        &self.shared.parents
    }

    /// Claims `v` for parent `p` at `level`. Must run on the owner of `v`.
    pub fn set_parent(&self, ctx: &Ctx<'_>, v: VertexId, p: VertexId, level: u64) -> Result<Claim, RuntimeError> {
        self.shared.set_parent(ctx, v, p, level)
    }

    /// Claims `msgs` on the calling locality and expands what was accepted.
    /// Remote expansions become children of the running action.
    pub fn local_expand(&self, ctx: &Ctx<'_>, msgs: &[BfsExpandMsg]) -> Result<(), RuntimeError> {
        self.shared.local_expand(ctx, msgs)
    }

    /// Parent writes recorded since the last reset, if auditing is on.
    pub fn audit_log(&self) -> Option<Vec<AuditRecord>> {
        self.shared.audit.as_ref().map(|a| a.lock().clone())
    }

    /// SPMD body: every hosted locality calls this with the same root. The
    /// localities with `collect` set gather and return the full result.
    pub fn run(&self, driver: &Driver, root: VertexId, collect: bool) -> Result<Option<BfsResult>, BfsError> {
        let s = &self.shared;
        let n = s.graph.num_vertices();
        if root as usize >= n {
            return Err(BfsError::RootOutOfRange { root, n });
        }
        let ctx = driver.ctx();
        s.parents.fill_local(&ctx, -1)?;
        s.levels.fill_local(&ctx, UNSET)?;
        s.counters[driver.here().index()].reset();
        if let Some(sent) = &s.sent[driver.here().index()] {
            for c in sent.iter() {
                c.store(NOT_SENT, Ordering::Relaxed);
            }
        }
        if let Some(a) = &s.audit {
            a.lock().clear();
        }
        driver.barrier()?;

        let start = Instant::now();
        let traversal = if driver.here() == LocalityId(0) {
            let mut payload = Vec::with_capacity(BfsExpandMsg::WIRE_LEN);
            BfsExpandMsg {
                source: root,
                parent: root,
                level: 0,
            }
            .encode_into(&mut payload);
            driver
                .remote_action(s.parents.owner(root as usize), BFS_EXPAND, payload)
                .and_then(|h| h.wait())
        } else {
            Ok(())
        };
        let settled = driver.barrier();
        let elapsed = start.elapsed();
        traversal?;
        settled?;

        let result = if collect {
            let parents = s.parents.gather(&ctx);
            let levels = s.levels.gather(&ctx);
            match (parents, levels) {
                (Ok(parents), Ok(levels)) => Ok(Some(BfsResult {
                    root,
                    parents,
                    levels: levels.into_iter().map(|l| if l == UNSET { -1 } else { l }).collect(),
                    stats: self.stats(),
                    elapsed,
                })),
                (Err(e), _) | (_, Err(e)) => Err(e.into()),
            }
        } else {
            Ok(None)
        };
        driver.barrier()?;
        result
    }

    /// Sum of the counters of the localities hosted here.
    pub fn stats(&self) -> BfsStats {
        let mut t = BfsStats::default();
        for c in &self.shared.counters {
            t.remote_messages += c.remote_messages.load(Ordering::Relaxed);
            t.remote_expansions += c.remote_expansions.load(Ordering::Relaxed);
            t.claims += c.claims.load(Ordering::Relaxed);
            t.relaxations += c.relaxations.load(Ordering::Relaxed);
        }
        t
    }
}

impl Shared {
    fn set_parent(&self, ctx: &Ctx<'_>, v: VertexId, p: VertexId, level: u64) -> Result<Claim, RuntimeError> {
        let i = v as usize;
        let lvl = level as i64;
        loop {
            let cur = self.levels.load(ctx, i)?;
            if cur == LOCKED {
                thread::yield_now();
                continue;
            }
            if cur <= lvl {
                return Ok(Claim::Rejected);
            }
            if self.levels.compare_exchange_value(ctx, i, cur, LOCKED)?.is_err() {
                continue;
            }
            let old_parent = self.parents.load(ctx, i)?;
            let claim = if cur == UNSET {
                if !self.parents.compare_exchange(ctx, i, -1, p as i64)? {
                    self.levels.store(ctx, i, cur)?;
                    return Err(RuntimeError::Action(format!(
                        "vertex {v} has parent {old_parent} but no level"
                    )));
                }
                Claim::Claimed
            } else {
                self.parents.store(ctx, i, p as i64)?;
                Claim::Relaxed
            };
            if let Some(a) = &self.audit {
                a.lock().push(AuditRecord {
                    vertex: v,
                    old_parent,
                    new_parent: p as i64,
                    old_level: (cur != UNSET).then_some(cur as u64),
                    new_level: level,
                });
            }
            self.levels.store(ctx, i, lvl)?;
            let c = &self.counters[ctx.here().index()];
            match claim {
                Claim::Claimed => c.claims.fetch_add(1, Ordering::Relaxed),
                _ => c.relaxations.fetch_add(1, Ordering::Relaxed),
            };
            return Ok(claim);
        }
    }

    fn local_expand(&self, ctx: &Ctx<'_>, msgs: &[BfsExpandMsg]) -> Result<(), RuntimeError> {
        let mut q1: Vec<(VertexId, u64)> = Vec::new();
        for m in msgs {
            if self.set_parent(ctx, m.source, m.parent, m.level)?.accepted() {
                q1.push((m.source, m.level));
            }
        }
        if self.batch {
            self.drain(ctx, q1)
        } else {
            let mut q2 = Vec::new();
            while !q1.is_empty() {
                self.expand_round(ctx, &q1, &mut q2, None)?;
                std::mem::swap(&mut q1, &mut q2);
                q2.clear();
            }
            Ok(())
        }
    }

    /// Batch mode: hands `claimed` to the locality's single drainer, becoming
    /// the drainer if there is none. The drainer merges everything pending
    /// into each round, lowest level first, so batches that arrive with
    /// shorter paths are expanded before this locality runs further ahead.
    /// An action that only enqueues may finish at once: the running drainer
    /// is itself an unfinished part of the same ack tree.
    fn drain(&self, ctx: &Ctx<'_>, claimed: Vec<(VertexId, u64)>) -> Result<(), RuntimeError> {
        let here = ctx.here();
        let slot = &self.frontier[here.index()];
        {
            let mut f = slot.lock();
            f.pending.extend(claimed);
            if f.draining {
                return Ok(());
            }
            f.draining = true;
        }
        let mut outbox = vec![Vec::new(); ctx.localities()];
        let mut q2 = Vec::new();
        let mut result = Ok(());
        loop {
            let mut q1 = {
                let mut f = slot.lock();
                if f.pending.is_empty() || result.is_err() {
                    f.pending.clear();
                    f.draining = false;
                    break;
                }
                std::mem::take(&mut f.pending)
            };
            // Only the lowest level goes this round; the rest waits with
            // whatever arrives before the next one.
            let low = q1.iter().map(|&(_, lvl)| lvl).min().unwrap();
            let mut later = Vec::new();
            q1.retain(|&e| {
                e.1 == low || {
                    later.push(e);
                    false
                }
            });
            result = self.expand_round(ctx, &q1, &mut q2, Some(&mut outbox));
            if result.is_ok() {
                result = self.flush(ctx, &mut outbox);
            }
            q1.clear();
            {
                let mut f = slot.lock();
                f.pending.append(&mut later);
                f.pending.append(&mut q2);
            }
            // Give peers on a shared core a chance to send their next round.
            thread::yield_now();
        }
        result
    }

    fn flush(&self, ctx: &Ctx<'_>, outbox: &mut [Vec<u8>]) -> Result<(), RuntimeError> {
        let counters = &self.counters[ctx.here().index()];
        for (k, buf) in outbox.iter_mut().enumerate() {
            if !buf.is_empty() {
                counters.remote_messages.fetch_add(1, Ordering::Relaxed);
                ctx.remote_action(LocalityId(k as u32), BFS_EXPAND_BATCH, std::mem::take(buf))?;
            }
        }
        Ok(())
    }

    /// Expands claimed `(vertex, level)` entries once. Locally owned
    /// neighbors that are claimed go to `next`; remote ones are sent at once,
    /// or appended to `outbox` per destination in batch mode.
    fn expand_round(
        &self,
        ctx: &Ctx<'_>,
        q1: &[(VertexId, u64)],
        next: &mut Vec<(VertexId, u64)>,
        mut outbox: Option<&mut Vec<Vec<u8>>>,
    ) -> Result<(), RuntimeError> {
        let counters = &self.counters[ctx.here().index()];
        let sent = self.sent[ctx.here().index()].as_deref();
        let local = self.parents.local_range(ctx);
        let mut payload = Vec::with_capacity(BfsExpandMsg::WIRE_LEN);
        for &(u, lvl) in q1 {
            // A shorter path re-expanded `u` after this entry was queued.
            if self.levels.load(ctx, u as usize)? != lvl as i64 {
                continue;
            }
            let pu = self.parents.load(ctx, u as usize)?;
            let level = lvl + 1;
            for &v in self.graph.neighbors(u) {
                // The parent is one level closer and would reject.
                if v as i64 == pu {
                    continue;
                }
                if local.contains(&(v as usize)) {
                    if self.set_parent(ctx, v, u, level)?.accepted() {
                        next.push((v, level));
                    }
                    continue;
                }
                // An expansion of `v` at this level or lower is already on
                // its way, so this one could only be rejected. A plain load
                // and store is enough: a racing store only ever records a
                // level that really was sent.
                if let Some(sent) = sent {
                    let slot = &sent[v as usize];
                    if level < NOT_SENT as u64 {
                        if slot.load(Ordering::Relaxed) <= level as u32 {
                            continue;
                        }
                        slot.store(level as u32, Ordering::Relaxed);
                    }
                }
                let msg = BfsExpandMsg {
                    source: v,
                    parent: u,
                    level,
                };
                let owner = self.parents.owner(v as usize);
                counters.remote_expansions.fetch_add(1, Ordering::Relaxed);
                match outbox.as_deref_mut() {
                    Some(outbox) => msg.encode_into(&mut outbox[owner.index()]),
                    None => {
                        payload.clear();
                        msg.encode_into(&mut payload);
                        counters.remote_messages.fetch_add(1, Ordering::Relaxed);
                        ctx.remote_action(owner, BFS_EXPAND, payload.clone())?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Starts a runtime for `config`, runs BFS from each root in turn and
/// returns the results gathered on the first hosted locality.
pub fn run_bfs(
    config: RuntimeConfig,
    graph: Arc<CsrGraph>,
    roots: &[VertexId],
    opts: BfsOptions,
) -> Result<Vec<BfsResult>, BfsError> {
    let mut b = RuntimeBuilder::new(config)?;
    let bfs = DistributedBfs::register(&mut b, graph, opts)?;
    let rt = b.start()?;
    run_roots(&rt, &bfs, roots)
}

/// Runs BFS from each root on an already started runtime.
pub fn run_roots(rt: &Runtime, bfs: &DistributedBfs, roots: &[VertexId]) -> Result<Vec<BfsResult>, BfsError> {
    let collector = rt.hosted()[0];
    let mut out = Vec::with_capacity(roots.len());
    for &root in roots {
        let per_locality = rt.run_spmd(|d| bfs.run(d, root, d.here() == collector));
        let mut result = None;
        for r in per_locality {
            if let Some(x) = r? {
                result = Some(x);
            }
        }
        out.push(result.expect("collector returns a result"));
    }
    Ok(out)
}
